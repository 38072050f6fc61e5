// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "slimconv/autodiff.hpp"
#include "slimconv/ops.hpp"
#include "slimconv/tensor.hpp"

using namespace slimconv;
using oracle::random_tensor;

namespace {

template <typename T>
void expect_near_all(const Tensor<T>& got, const oracle::DTensor& want, double tol) {
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.numel(); ++i)
    ASSERT_NEAR(static_cast<double>(got[i]), want[i], tol) << "at flat index " << i;
}

/// Checks d(sum(op(inputs) * R))/d(inputs) against central differences in
/// double precision.
void gradient_check(const std::vector<Tensor<double>>& inputs,
                    const std::function<Var(GradTape<double>&, const std::vector<Var>&)>& op,
                    double tol = 1e-6) {
  std::vector<Tensor<double>> xs = inputs;
  Rng rng(99);
  Tensor<double> weights;
  auto loss_of = [&](GradTape<double>& tape, std::vector<Var>& leaves) {
    leaves.clear();
    for (auto& x : xs) leaves.push_back(tape.leaf(x, true));
    Var out = op(tape, leaves);
    if (weights.empty()) weights = random_tensor<double>(tape.value(out).shape(), rng);
    return ops::sum(tape, ops::mul(tape, out, tape.constant(weights)));
  };
  GradTape<double> tape;
  std::vector<Var> leaves;
  Var loss = loss_of(tape, leaves);
  tape.backward(loss);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor<double> analytic = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < xs[k].numel(); ++i) {
      auto f = [&] {
        GradTape<double> t2(false);
        std::vector<Var> l2;
        return t2.value(loss_of(t2, l2))[0];
      };
      const double fd = oracle::central_difference(f, xs[k][i], 1e-5);
      ASSERT_NEAR(analytic[i], fd, tol * std::max(1.0, std::abs(fd)))
          << "input " << k << " index " << i;
    }
  }
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndBadLength) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor<float> t(Shape{2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at(1, 2), 5.0f);
  EXPECT_THROW(t.at(2, 0), IndexError);
}

TEST(Pointwise, SumOfOnes) {
  GradTape<float> tape(false);
  Var y = ops::pointwise(tape, tape.constant(Tensor<float>::ones({1, 1, 1, 2})),
                         tape.constant(Tensor<float>(Shape{2, 1}, {1.f, 1.f})),
                         tape.constant(Tensor<float>::zeros({1})));
  EXPECT_EQ(tape.value(y).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(tape.value(y)[0], 2.0f);
}

TEST(Pointwise, IdentityWeights) {
  Rng rng(1);
  const std::size_t c = 6;
  Tensor<float> eye({c, c});
  for (std::size_t i = 0; i < c; ++i) eye.at(i, i) = 1.0f;
  auto x = random_tensor<float>({2, 3, 3, c}, rng);
  GradTape<float> tape(false);
  Var y = ops::pointwise(tape, tape.constant(x), tape.constant(eye),
                         tape.constant(Tensor<float>::zeros({c})));
  EXPECT_EQ(tape.value(y), x);
}

TEST(Pointwise, MatchesLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<float>({2, 3, 3, 4}, rng);
    auto w = random_tensor<float>({4, 5}, rng);
    auto b = random_tensor<float>({5}, rng);
    GradTape<float> tape(false);
    Var y = ops::pointwise(tape, tape.constant(x), tape.constant(w), tape.constant(b));
    expect_near_all(tape.value(y),
                    oracle::pointwise(oracle::to_double(x), oracle::to_double(w),
                                      oracle::to_double(b)),
                    1e-5);
  }
}

TEST(Pointwise, ShapeMismatchNamesAxis) {
  GradTape<float> tape(false);
  try {
    ops::pointwise(tape, tape.constant(Tensor<float>::ones({1, 1, 1, 3})),
                   tape.constant(Tensor<float>::ones({2, 4})),
                   tape.constant(Tensor<float>::ones({4})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("Cin"), std::string::npos);
  }
}

TEST(Depthwise, OneByOneOnesIsIdentity) {
  Rng rng(3);
  auto x = random_tensor<float>({1, 4, 4, 3}, rng);
  GradTape<float> tape(false);
  Var y = ops::depthwise(tape, tape.constant(x), tape.constant(Tensor<float>::ones({1, 1, 3})),
                         tape.constant(Tensor<float>::zeros({3})));
  EXPECT_EQ(tape.value(y), x);
}

TEST(Depthwise, CountsOverlapWithZeroPadding) {
  GradTape<float> tape(false);
  Var y = ops::depthwise(tape, tape.constant(Tensor<float>::ones({1, 3, 3, 1})),
                         tape.constant(Tensor<float>::ones({3, 3, 1})),
                         tape.constant(Tensor<float>::zeros({1})));
  const auto& v = tape.value(y);
  EXPECT_EQ(v.at(0, 1, 1, 0), 9.0f);
  EXPECT_EQ(v.at(0, 0, 0, 0), 4.0f);
  EXPECT_EQ(v.at(0, 0, 2, 0), 4.0f);
  EXPECT_EQ(v.at(0, 2, 0, 0), 4.0f);
  EXPECT_EQ(v.at(0, 2, 2, 0), 4.0f);
  EXPECT_EQ(v.at(0, 0, 1, 0), 6.0f);
}

TEST(Depthwise, MatchesLoopOracle) {
  Rng rng(4);
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    auto x = random_tensor<float>({1, 5, 5, 3}, rng);
    auto w = random_tensor<float>({k, k, 3}, rng);
    auto b = random_tensor<float>({3}, rng);
    GradTape<float> tape(false);
    Var y = ops::depthwise(tape, tape.constant(x), tape.constant(w), tape.constant(b));
    expect_near_all(tape.value(y),
                    oracle::depthwise(oracle::to_double(x), oracle::to_double(w),
                                      oracle::to_double(b)),
                    1e-5);
  }
}

TEST(Depthwise, EvenKernelUnsupported) {
  GradTape<float> tape(false);
  EXPECT_THROW(ops::depthwise(tape, tape.constant(Tensor<float>::ones({1, 4, 4, 2})),
                              tape.constant(Tensor<float>::ones({2, 2, 2})),
                              tape.constant(Tensor<float>::zeros({2}))),
               ContractError);
}

TEST(Strided, PatchSums) {
  Tensor<float> x({1, 4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  GradTape<float> tape(false);
  Var y = ops::patchify(tape, tape.constant(x), tape.constant(Tensor<float>::ones({2, 2, 1, 1})),
                        tape.constant(Tensor<float>::zeros({1})), 2);
  const auto& v = tape.value(y);
  ASSERT_EQ(v.shape(), (Shape{1, 2, 2, 1}));
  EXPECT_EQ(v[0], 0.f + 1 + 4 + 5);
  EXPECT_EQ(v[1], 2.f + 3 + 6 + 7);
  EXPECT_EQ(v[2], 8.f + 9 + 12 + 13);
  EXPECT_EQ(v[3], 10.f + 11 + 14 + 15);
}

TEST(Strided, StrideOneIsPointwise) {
  Rng rng(5);
  auto x = random_tensor<float>({2, 3, 3, 4}, rng);
  auto w = random_tensor<float>({4, 5}, rng);
  auto b = random_tensor<float>({5}, rng);
  GradTape<float> tape(false);
  Var a = ops::pointwise(tape, tape.constant(x), tape.constant(w), tape.constant(b));
  Var c = ops::patchify(tape, tape.constant(x), tape.constant(w.reshaped({1, 1, 4, 5})),
                        tape.constant(b), 1);
  EXPECT_EQ(tape.value(a), tape.value(c));
}

TEST(Strided, MatchesLoopOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor<float>({1, 8, 8, 3}, rng);
    auto w = random_tensor<float>({4, 4, 3, 6}, rng);
    auto b = random_tensor<float>({6}, rng);
    GradTape<float> tape(false);
    Var y = ops::patchify(tape, tape.constant(x), tape.constant(w), tape.constant(b), 4);
    expect_near_all(tape.value(y),
                    oracle::strided(oracle::to_double(x), oracle::to_double(w),
                                    oracle::to_double(b), 4),
                    1e-5);
  }
}

TEST(Strided, IndivisibleExtent) {
  GradTape<float> tape(false);
  EXPECT_THROW(ops::patchify(tape, tape.constant(Tensor<float>::ones({1, 6, 8, 1})),
                             tape.constant(Tensor<float>::ones({4, 4, 1, 1})),
                             tape.constant(Tensor<float>::zeros({1})), 4),
               DimensionError);
}

TEST(LayerNorm, ConstantInputGivesZeros) {
  GradTape<float> tape(false);
  Var y = ops::layer_norm(tape, tape.constant(Tensor<float>::full({2, 5}, 3.5f)),
                          tape.constant(Tensor<float>::ones({5})),
                          tape.constant(Tensor<float>::zeros({5})));
  for (float v : tape.value(y).storage()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, UnitVariancePair) {
  GradTape<double> tape(false);
  Var y = ops::layer_norm(tape, tape.constant(Tensor<double>(Shape{1, 2}, {1.0, -1.0})),
                          tape.constant(Tensor<double>::ones({2})),
                          tape.constant(Tensor<double>::zeros({2})), 1e-12);
  EXPECT_NEAR(tape.value(y)[0], 1.0, 1e-9);
  EXPECT_NEAR(tape.value(y)[1], -1.0, 1e-9);
}

TEST(LayerNorm, MatchesTwoPassOracleAndNormalizes) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<float>({3, 2, 2, 8}, rng, 3.0);
    auto g = Tensor<float>::ones({8});
    auto b = Tensor<float>::zeros({8});
    GradTape<float> tape(false);
    Var y = ops::layer_norm(tape, tape.constant(x), tape.constant(g), tape.constant(b));
    const auto& v = tape.value(y);
    expect_near_all(v, oracle::layer_norm(oracle::to_double(x), oracle::to_double(g),
                                          oracle::to_double(b), 1e-6),
                    1e-5);
    for (std::size_t r = 0; r < v.numel() / 8; ++r) {
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < 8; ++i) mean += v[r * 8 + i];
      mean /= 8;
      for (std::size_t i = 0; i < 8; ++i) var += (v[r * 8 + i] - mean) * (v[r * 8 + i] - mean);
      var /= 8;
      EXPECT_NEAR(mean, 0.0, 1e-5);
      EXPECT_NEAR(var, 1.0, 1e-3);
    }
  }
}

TEST(LayerNorm, RequiresPositiveEps) {
  GradTape<float> tape(false);
  EXPECT_THROW(ops::layer_norm(tape, tape.constant(Tensor<float>::ones({1, 1})),
                               tape.constant(Tensor<float>::ones({1})),
                               tape.constant(Tensor<float>::zeros({1})), 0.0f),
               ContractError);
}

TEST(Elementwise, GeluAndResidual) {
  GradTape<float> tape(false);
  Var g = ops::gelu(tape, tape.constant(Tensor<float>(Shape{3}, {0.0f, 1.0f, -1.0f})));
  EXPECT_EQ(tape.value(g)[0], 0.0f);
  EXPECT_NEAR(tape.value(g)[1], oracle::gelu(1.0), 1e-6);
  EXPECT_NEAR(tape.value(g)[2], oracle::gelu(-1.0), 1e-6);

  Var same = ops::residual_add_zero_pad(tape, tape.constant(Tensor<float>(Shape{1, 1, 1, 2}, {1.f, 2.f})),
                                        tape.constant(Tensor<float>(Shape{1, 1, 1, 2}, {3.f, 4.f})));
  EXPECT_EQ(tape.value(same)[0], 4.f);
  EXPECT_EQ(tape.value(same)[1], 6.f);

  Var padded = ops::residual_add_zero_pad(tape, tape.constant(Tensor<float>(Shape{1, 1, 1, 1}, {5.f})),
                                          tape.constant(Tensor<float>(Shape{1, 1, 1, 2}, {1.f, 2.f})));
  EXPECT_EQ(tape.value(padded)[0], 6.f);
  EXPECT_EQ(tape.value(padded)[1], 2.f);

  EXPECT_THROW(ops::residual_add_zero_pad(tape, tape.constant(Tensor<float>::ones({1, 1, 1, 3})),
                                          tape.constant(Tensor<float>::ones({1, 1, 1, 2}))),
               DimensionError);
}

TEST(GlobalPoolAndLinear, MatchOracle) {
  Rng rng(8);
  auto x = random_tensor<float>({2, 3, 3, 4}, rng);
  GradTape<float> tape(false);
  Var p = ops::global_avg_pool(tape, tape.constant(x));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) s += x.at(n, i, j, c);
      EXPECT_NEAR(tape.value(p).at(n, c), s / 9.0, 1e-6);
    }
  auto w = random_tensor<float>({4, 3}, rng);
  auto b = random_tensor<float>({3}, rng);
  Var y = ops::linear(tape, p, tape.constant(w), tape.constant(b));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3; ++o) {
      double s = b[o];
      for (std::size_t c = 0; c < 4; ++c) s += tape.value(p).at(n, c) * w.at(c, o);
      EXPECT_NEAR(tape.value(y).at(n, o), s, 1e-5);
    }
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  GradTape<double> tape(false);
  std::vector<int> y{0, 3, 4};
  Var l = ops::softmax_cross_entropy(tape, tape.constant(Tensor<double>::zeros({3, 5})),
                                     std::span<const int>(y), 0.0);
  EXPECT_NEAR(tape.value(l)[0], std::log(5.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, SaturatedCorrectClassGoesToZero) {
  Tensor<float> logits({2, 4});
  logits.at(0, 1) = 1e4f;
  logits.at(1, 3) = 1e4f;
  std::vector<int> y{1, 3};
  GradTape<float> tape(false);
  Var l = ops::softmax_cross_entropy(tape, tape.constant(logits), std::span<const int>(y), 0.0f);
  EXPECT_NEAR(tape.value(l)[0], 0.0f, 1e-6);
}

TEST(SoftmaxCrossEntropy, MatchesSmoothedOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = random_tensor<double>({4, 5}, rng, 3.0);
    std::vector<int> y;
    for (int i = 0; i < 4; ++i) y.push_back(static_cast<int>(rng.uniform_int(5)));
    GradTape<double> tape(false);
    Var l = ops::softmax_cross_entropy(tape, tape.constant(logits), std::span<const int>(y), 0.1);
    EXPECT_NEAR(tape.value(l)[0], oracle::smoothed_ce(logits, y, 0.1), 1e-6);
    GradTape<float> tf(false);
    Var lf = ops::softmax_cross_entropy(tf, tf.constant(logits.cast<float>()),
                                        std::span<const int>(y), 0.1f);
    EXPECT_NEAR(tf.value(lf)[0], oracle::smoothed_ce(logits, y, 0.1), 1e-5);
  }
}

TEST(SoftmaxCrossEntropy, TargetOutOfRange) {
  GradTape<float> tape(false);
  std::vector<int> y{5};
  EXPECT_THROW(ops::softmax_cross_entropy(tape, tape.constant(Tensor<float>::zeros({1, 5})),
                                          std::span<const int>(y), 0.0f),
               IndexError);
}

TEST(Backward, LinearMapGradientIsInput) {
  Rng rng(10);
  auto x = random_tensor<float>({7}, rng);
  GradTape<float> tape;
  Var w = tape.leaf(random_tensor<float>({7}, rng), true);
  Var untouched = tape.leaf(random_tensor<float>({3}, rng), true);
  Var loss = ops::sum(tape, ops::mul(tape, w, tape.constant(x)));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(w), x);
  const Tensor<float> zero_grad = tape.grad(untouched);
  for (float g : zero_grad.storage()) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, NonScalarIsContractError) {
  GradTape<float> tape;
  Var w = tape.leaf(Tensor<float>::ones({3}), true);
  Var y = ops::gelu(tape, w);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(GradCheck, Pointwise) {
  Rng rng(11);
  gradient_check({random_tensor<double>({2, 2, 2, 3}, rng), random_tensor<double>({3, 4}, rng),
                  random_tensor<double>({4}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::pointwise(t, v[0], v[1], v[2]);
                 });
}

TEST(GradCheck, Depthwise) {
  Rng rng(12);
  gradient_check({random_tensor<double>({2, 4, 4, 2}, rng), random_tensor<double>({3, 3, 2}, rng),
                  random_tensor<double>({2}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::depthwise(t, v[0], v[1], v[2]);
                 });
}

TEST(GradCheck, Strided) {
  Rng rng(13);
  gradient_check({random_tensor<double>({1, 4, 4, 2}, rng), random_tensor<double>({2, 2, 2, 3}, rng),
                  random_tensor<double>({3}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::patchify(t, v[0], v[1], v[2], 2);
                 });
}

TEST(GradCheck, LayerNorm) {
  Rng rng(14);
  gradient_check({random_tensor<double>({3, 5}, rng, 2.0), random_tensor<double>({5}, rng),
                  random_tensor<double>({5}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::layer_norm(t, v[0], v[1], v[2], 1e-6);
                 });
}

TEST(GradCheck, ElementwiseAndReductions) {
  Rng rng(15);
  gradient_check({random_tensor<double>({2, 2, 2, 3}, rng, 2.0)},
                 [](GradTape<double>& t, const std::vector<Var>& v) { return ops::gelu(t, v[0]); });
  gradient_check({random_tensor<double>({2, 2, 2, 3}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::global_avg_pool(t, v[0]);
                 });
  gradient_check({random_tensor<double>({2, 2, 2, 2}, rng), random_tensor<double>({2, 2, 2, 3}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::residual_add_zero_pad(t, v[0], v[1]);
                 });
  gradient_check({random_tensor<double>({2, 3, 3}, rng), random_tensor<double>({3}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::scale_channels(t, v[0], v[1]);
                 });
  gradient_check({random_tensor<double>({4, 5}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::narrow(t, v[0], Shape{2, 3});
                 });
  gradient_check({random_tensor<double>({3, 2}, rng)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::scale_samples(t, v[0], std::vector<double>{2.0, 0.0, 0.5});
                 });
}

TEST(GradCheck, SmoothedCrossEntropy) {
  Rng rng(16);
  static const std::vector<int> y{1, 0, 4};
  gradient_check({random_tensor<double>({3, 5}, rng, 2.0)},
                 [](GradTape<double>& t, const std::vector<Var>& v) {
                   return ops::softmax_cross_entropy(t, v[0], std::span<const int>(y), 0.1);
                 });
}

TEST(Determinism, RepeatedKernelsAreBitIdentical) {
  Rng a(17), b(17);
  auto x1 = random_tensor<float>({2, 8, 8, 6}, a);
  auto x2 = random_tensor<float>({2, 8, 8, 6}, b);
  auto w = random_tensor<float>({7, 7, 6}, a);
  auto bias = random_tensor<float>({6}, a);
  GradTape<float> t1, t2;
  Var y1 = ops::depthwise(t1, t1.leaf(x1, true), t1.constant(w), t1.constant(bias));
  Var y2 = ops::depthwise(t2, t2.leaf(x2, true), t2.constant(w), t2.constant(bias));
  EXPECT_EQ(t1.value(y1), t2.value(y2));
}
