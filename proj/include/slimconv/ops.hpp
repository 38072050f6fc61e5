// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable operations recorded on a GradTape. Image tensors are
// (N, H, W, C); every op validates shapes and names the offending axis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slimconv/autodiff.hpp"
#include "slimconv/errors.hpp"
#include "slimconv/kernels.hpp"
#include "slimconv/tensor.hpp"

namespace slimconv::ops {

namespace detail {

inline void expect_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(s));
  }
}

inline void expect_extent(std::size_t got, std::size_t want, const char* op, const char* axis) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": axis '" + axis + "' has extent " +
                         std::to_string(got) + ", expected " + std::to_string(want));
  }
}

inline std::size_t rows_of(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

}  // namespace detail

/// Prefix restriction: keeps indices [0, extents[a]) along every axis. Used
/// for both activation slicing and per-block weight slicing.
template <typename T>
Var narrow(GradTape<T>& tape, Var x, const Shape& extents) {
  const Tensor<T>& xv = tape.value(x);
  const Shape& in = xv.shape();
  detail::expect_rank(extents, in.size(), "narrow", "extents");
  for (std::size_t a = 0; a < in.size(); ++a) {
    if (extents[a] == 0 || extents[a] > in[a]) {
      throw DimensionError("narrow: axis " + std::to_string(a) + " extent " +
                           std::to_string(extents[a]) + " outside (0, " + std::to_string(in[a]) +
                           "]");
    }
  }
  if (extents == in) return x;

  // Contiguous runs along the last axis; enumerate outer indices.
  const std::size_t rank = in.size();
  const std::size_t run = extents[rank - 1];
  const auto in_strides = row_major_strides(in);
  std::vector<std::size_t> offsets;
  offsets.reserve(shape_numel(extents) / run);
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t outer = shape_numel(extents) / run;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t a = 0; a + 1 < rank; ++a) off += idx[a] * in_strides[a];
    offsets.push_back(off);
    for (std::size_t a = rank - 1; a-- > 0;) {
      if (++idx[a] < extents[a]) break;
      idx[a] = 0;
    }
  }
  Tensor<T> out(extents);
  for (std::size_t o = 0; o < offsets.size(); ++o)
    std::copy_n(xv.data() + offsets[o], run, out.data() + o * run);

  return tape.push(std::move(out), {x},
                   [x, offsets = std::move(offsets), run](GradTape<T>& t, std::size_t self) {
                     const Tensor<T>& g = *t.grad_buffer(Var{self});
                     Tensor<T>* gx = t.grad_buffer(x);
                     if (!gx) return;
                     for (std::size_t o = 0; o < offsets.size(); ++o) {
                       T* dst = gx->data() + offsets[o];
                       const T* src = g.data() + o * run;
                       for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
                     }
                   });
}

/// Narrow to the first `c` entries of the last axis.
template <typename T>
Var narrow_channels(GradTape<T>& tape, Var x, std::size_t c) {
  Shape e = tape.value(x).shape();
  e.back() = c;
  return narrow(tape, x, e);
}

/// 1x1 convolution over the last axis: x (..., Cin), w (Cin, Cout), b (Cout).
template <typename T>
Var pointwise(GradTape<T>& tape, Var x, Var w, Var b) {
  const Shape& xs = tape.value(x).shape();
  const Shape& ws = tape.value(w).shape();
  const Shape& bs = tape.value(b).shape();
  detail::expect_rank(ws, 2, "conv2d_pointwise", "weight");
  detail::expect_rank(bs, 1, "conv2d_pointwise", "bias");
  detail::expect_extent(xs.back(), ws[0], "conv2d_pointwise", "Cin");
  detail::expect_extent(bs[0], ws[1], "conv2d_pointwise", "Cout");
  const std::size_t rows = detail::rows_of(xs), cin = ws[0], cout = ws[1];
  Shape os = xs;
  os.back() = cout;
  Tensor<T> out(os);
  kernels::pointwise_forward(tape.value(x).data(), rows, cin, tape.value(w).data(), cout,
                             tape.value(b).data(), out.data());
  return tape.push(std::move(out), {x, w, b},
                   [x, w, b, rows, cin, cout](GradTape<T>& t, std::size_t self) {
                     const Tensor<T>& g = *t.grad_buffer(Var{self});
                     Tensor<T>* gx = t.grad_buffer(x);
                     Tensor<T>* gw = t.grad_buffer(w);
                     Tensor<T>* gb = t.grad_buffer(b);
                     kernels::pointwise_backward(t.value(x).data(), rows, cin, t.value(w).data(),
                                                 cout, g.data(), gx ? gx->data() : nullptr,
                                                 gw ? gw->data() : nullptr,
                                                 gb ? gb->data() : nullptr);
                   });
}

/// Fully connected layer on (N, Din); same arithmetic as a pointwise conv.
template <typename T>
Var linear(GradTape<T>& tape, Var x, Var w, Var b) {
  detail::expect_rank(tape.value(x).shape(), 2, "linear", "input");
  return pointwise(tape, x, w, b);
}

/// Depthwise k x k convolution, zero padding k/2: x (N,H,W,C), w (k,k,C), b (C).
template <typename T>
Var depthwise(GradTape<T>& tape, Var x, Var w, Var b) {
  const Shape& xs = tape.value(x).shape();
  const Shape& ws = tape.value(w).shape();
  detail::expect_rank(xs, 4, "conv2d_depthwise", "input");
  detail::expect_rank(ws, 3, "conv2d_depthwise", "weight");
  detail::expect_extent(ws[1], ws[0], "conv2d_depthwise", "kernel width");
  if (ws[0] % 2 == 0) {
    throw ContractError("conv2d_depthwise: unsupported kernel size " + std::to_string(ws[0]) +
                        " (must be odd)");
  }
  detail::expect_extent(ws[2], xs[3], "conv2d_depthwise", "C");
  detail::expect_extent(tape.value(b).numel(), xs[3], "conv2d_depthwise", "bias C");
  const std::size_t n = xs[0], h = xs[1], wd = xs[2], c = xs[3], k = ws[0];
  Tensor<T> out(xs);
  kernels::depthwise_forward(tape.value(x).data(), n, h, wd, c, tape.value(w).data(), k,
                             tape.value(b).data(), out.data());
  return tape.push(std::move(out), {x, w, b},
                   [x, w, b, n, h, wd, c, k](GradTape<T>& t, std::size_t self) {
                     const Tensor<T>& g = *t.grad_buffer(Var{self});
                     Tensor<T>* gx = t.grad_buffer(x);
                     Tensor<T>* gw = t.grad_buffer(w);
                     Tensor<T>* gb = t.grad_buffer(b);
                     kernels::depthwise_backward(t.value(x).data(), n, h, wd, c, t.value(w).data(),
                                                 k, g.data(), gx ? gx->data() : nullptr,
                                                 gw ? gw->data() : nullptr,
                                                 gb ? gb->data() : nullptr);
                   });
}

/// Strided patch convolution with kernel == stride: x (N,H,W,Cin),
/// w (k,k,Cin,Cout), b (Cout) -> (N, H/k, W/k, Cout).
template <typename T>
Var patchify(GradTape<T>& tape, Var x, Var w, Var b, std::size_t stride) {
  const Shape& xs = tape.value(x).shape();
  const Shape& ws = tape.value(w).shape();
  detail::expect_rank(xs, 4, "conv2d_strided", "input");
  detail::expect_rank(ws, 4, "conv2d_strided", "weight");
  detail::expect_extent(ws[0], stride, "conv2d_strided", "kernel height (must equal stride)");
  detail::expect_extent(ws[1], stride, "conv2d_strided", "kernel width (must equal stride)");
  detail::expect_extent(ws[2], xs[3], "conv2d_strided", "Cin");
  detail::expect_extent(tape.value(b).numel(), ws[3], "conv2d_strided", "bias Cout");
  if (xs[1] % stride != 0) {
    throw DimensionError("conv2d_strided: axis 'H' extent " + std::to_string(xs[1]) +
                         " not divisible by stride " + std::to_string(stride));
  }
  if (xs[2] % stride != 0) {
    throw DimensionError("conv2d_strided: axis 'W' extent " + std::to_string(xs[2]) +
                         " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t n = xs[0], h = xs[1], wd = xs[2], cin = xs[3], cout = ws[3], k = stride;
  Tensor<T> out(Shape{n, h / k, wd / k, cout});
  kernels::patchify_forward(tape.value(x).data(), n, h, wd, cin, tape.value(w).data(), k, cout,
                            tape.value(b).data(), out.data());
  return tape.push(std::move(out), {x, w, b},
                   [x, w, b, n, h, wd, cin, cout, k](GradTape<T>& t, std::size_t self) {
                     const Tensor<T>& g = *t.grad_buffer(Var{self});
                     Tensor<T>* gx = t.grad_buffer(x);
                     Tensor<T>* gw = t.grad_buffer(w);
                     Tensor<T>* gb = t.grad_buffer(b);
                     kernels::patchify_backward(t.value(x).data(), n, h, wd, cin,
                                                t.value(w).data(), k, cout, g.data(),
                                                gx ? gx->data() : nullptr,
                                                gw ? gw->data() : nullptr,
                                                gb ? gb->data() : nullptr);
                   });
}

/// LayerNorm over the last axis using the active channel count.
template <typename T>
Var layer_norm(GradTape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-6)) {
  if (!(eps > T{0})) throw ContractError("layer_norm_channels: eps must be > 0");
  const Shape& xs = tape.value(x).shape();
  const std::size_t c = xs.back();
  detail::expect_extent(tape.value(gamma).numel(), c, "layer_norm_channels", "gamma C");
  detail::expect_extent(tape.value(beta).numel(), c, "layer_norm_channels", "beta C");
  const std::size_t rows = detail::rows_of(xs);
  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  Tensor<T> rstd(Shape{rows});
  kernels::layer_norm_forward(tape.value(x).data(), rows, c, tape.value(gamma).data(),
                              tape.value(beta).data(), eps, out.data(), xhat.data(), rstd.data());
  return tape.push(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](
                       GradTape<T>& t, std::size_t self) {
                     const Tensor<T>& g = *t.grad_buffer(Var{self});
                     Tensor<T>* gx = t.grad_buffer(x);
                     Tensor<T>* gg = t.grad_buffer(gamma);
                     Tensor<T>* gb = t.grad_buffer(beta);
                     kernels::layer_norm_backward(g.data(), xhat.data(), rstd.data(), rows, c,
                                                  t.value(gamma).data(),
                                                  gx ? gx->data() : nullptr,
                                                  gg ? gg->data() : nullptr,
                                                  gb ? gb->data() : nullptr);
                   });
}

template <typename T>
Var gelu(GradTape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = kernels::gelu(xv[i]);
  return tape.push(std::move(out), {x}, [x](GradTape<T>& t, std::size_t self) {
    const Tensor<T>& g = *t.grad_buffer(Var{self});
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const Tensor<T>& xv = t.value(x);
    for (std::size_t i = 0; i < xv.numel(); ++i) (*gx)[i] += g[i] * kernels::gelu_grad(xv[i]);
  });
}

/// (N,H,W,C) -> (N,C) spatial mean.
template <typename T>
Var global_avg_pool(GradTape<T>& tape, Var x) {
  const Shape& xs = tape.value(x).shape();
  detail::expect_rank(xs, 4, "global_avg_pool", "input");
  const std::size_t n = xs[0], hw = xs[1] * xs[2], c = xs[3];
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(Shape{n, c});
  const T inv = T{1} / static_cast<T>(hw);
  for (std::size_t i = 0; i < n; ++i) {
    T* o = out.data() + i * c;
    for (std::size_t p = 0; p < hw; ++p) {
      const T* xp = xv.data() + (i * hw + p) * c;
      for (std::size_t ch = 0; ch < c; ++ch) o[ch] += xp[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) o[ch] *= inv;
  }
  return tape.push(std::move(out), {x}, [x, n, hw, c, inv](GradTape<T>& t, std::size_t self) {
    const Tensor<T>& g = *t.grad_buffer(Var{self});
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p) {
        T* d = gx->data() + (i * hw + p) * c;
        const T* gi = g.data() + i * c;
        for (std::size_t ch = 0; ch < c; ++ch) d[ch] += gi[ch] * inv;
      }
  });
}

/// skip + [block_out | zeros(C - Ca)] along the channel axis.
template <typename T>
Var residual_add_zero_pad(GradTape<T>& tape, Var block_out, Var skip) {
  const Shape& bs = tape.value(block_out).shape();
  const Shape& ss = tape.value(skip).shape();
  detail::expect_rank(bs, ss.size(), "residual_add_zero_pad", "block output");
  for (std::size_t a = 0; a + 1 < ss.size(); ++a) {
    if (bs[a] != ss[a]) {
      throw DimensionError("residual_add_zero_pad: axis " + std::to_string(a) + " extent " +
                           std::to_string(bs[a]) + " != skip extent " + std::to_string(ss[a]));
    }
  }
  const std::size_t ca = bs.back(), c = ss.back();
  if (ca > c) {
    throw DimensionError("residual_add_zero_pad: channel overflow, block output has " +
                         std::to_string(ca) + " channels but skip has " + std::to_string(c));
  }
  const std::size_t rows = detail::rows_of(ss);
  Tensor<T> out = tape.value(skip);
  const T* bo = tape.value(block_out).data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * c;
    const T* b = bo + r * ca;
    for (std::size_t ch = 0; ch < ca; ++ch) o[ch] += b[ch];
  }
  return tape.push(std::move(out), {block_out, skip},
                   [block_out, skip, rows, ca, c](GradTape<T>& t, std::size_t self) {
                     const Tensor<T>& g = *t.grad_buffer(Var{self});
                     if (Tensor<T>* gs = t.grad_buffer(skip)) {
                       for (std::size_t i = 0; i < g.numel(); ++i) (*gs)[i] += g[i];
                     }
                     if (Tensor<T>* gb = t.grad_buffer(block_out)) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         T* d = gb->data() + r * ca;
                         const T* gr = g.data() + r * c;
                         for (std::size_t ch = 0; ch < ca; ++ch) d[ch] += gr[ch];
                       }
                     }
                   });
}

/// Per-channel multiply (layer scale): x (..., C) * s (C).
template <typename T>
Var scale_channels(GradTape<T>& tape, Var x, Var s) {
  const Shape& xs = tape.value(x).shape();
  const std::size_t c = xs.back();
  detail::expect_extent(tape.value(s).numel(), c, "scale_channels", "C");
  const std::size_t rows = detail::rows_of(xs);
  const Tensor<T>& xv = tape.value(x);
  const T* sv = tape.value(s).data();
  Tensor<T> out(xs);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) out[r * c + ch] = xv[r * c + ch] * sv[ch];
  return tape.push(std::move(out), {x, s}, [x, s, rows, c](GradTape<T>& t, std::size_t self) {
    const Tensor<T>& g = *t.grad_buffer(Var{self});
    const Tensor<T>& xv = t.value(x);
    const T* sv = t.value(s).data();
    if (Tensor<T>* gx = t.grad_buffer(x)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t ch = 0; ch < c; ++ch) (*gx)[r * c + ch] += g[r * c + ch] * sv[ch];
    }
    if (Tensor<T>* gs = t.grad_buffer(s)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t ch = 0; ch < c; ++ch) (*gs)[ch] += g[r * c + ch] * xv[r * c + ch];
    }
  });
}

/// Multiplies sample i (leading axis) by factors[i].
template <typename T>
Var scale_samples(GradTape<T>& tape, Var x, std::vector<T> factors) {
  const Tensor<T>& xv = tape.value(x);
  detail::expect_extent(factors.size(), xv.dim(0), "scale_samples", "N");
  const std::size_t per = xv.numel() / xv.dim(0);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < factors.size(); ++i)
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] = xv[i * per + j] * factors[i];
  return tape.push(std::move(out), {x},
                   [x, per, factors = std::move(factors)](GradTape<T>& t, std::size_t self) {
                     const Tensor<T>& g = *t.grad_buffer(Var{self});
                     Tensor<T>* gx = t.grad_buffer(x);
                     if (!gx) return;
                     for (std::size_t i = 0; i < factors.size(); ++i)
                       for (std::size_t j = 0; j < per; ++j)
                         (*gx)[i * per + j] += g[i * per + j] * factors[i];
                   });
}

/// Mean over the batch of cross-entropy against the smoothed target
/// (1 - eps) * onehot + eps / K. The 1/B factor is part of the loss.
template <typename T>
Var softmax_cross_entropy(GradTape<T>& tape, Var logits, std::span<const int> targets,
                          T smoothing = T{0}) {
  const Shape& ls = tape.value(logits).shape();
  detail::expect_rank(ls, 2, "softmax_cross_entropy", "logits");
  if (!(smoothing >= T{0} && smoothing < T{1})) {
    throw ContractError("softmax_cross_entropy: smoothing must lie in [0, 1)");
  }
  const std::size_t n = ls[0], k = ls[1];
  detail::expect_extent(targets.size(), n, "softmax_cross_entropy", "N (targets)");
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) +
                       " of sample " + std::to_string(i) + " outside [0, " + std::to_string(k) +
                       ")");
    }
  }
  const Tensor<T>& lv = tape.value(logits);
  Tensor<T> probs(ls);
  const T off = smoothing / static_cast<T>(k);
  const T on = T{1} - smoothing + off;
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lv.data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    T li{0};
    for (std::size_t j = 0; j < k; ++j) {
      const T logp = row[j] - lse;
      probs[i * k + j] = std::exp(logp);
      const T q = (static_cast<std::size_t>(targets[i]) == j) ? on : off;
      li -= q * logp;
    }
    total += li;
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  std::vector<int> tg(targets.begin(), targets.end());
  return tape.push(std::move(out), {logits},
                   [logits, n, k, on, off, probs = std::move(probs), tg = std::move(tg)](
                       GradTape<T>& t, std::size_t self) {
                     const T g = (*t.grad_buffer(Var{self}))[0] / static_cast<T>(n);
                     Tensor<T>* gl = t.grad_buffer(logits);
                     if (!gl) return;
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < k; ++j) {
                         const T q = (static_cast<std::size_t>(tg[i]) == j) ? on : off;
                         (*gl)[i * k + j] += g * (probs[i * k + j] - q);
                       }
                   });
}

template <typename T>
Var sum(GradTape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T s{0};
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i];
  return tape.push(Tensor<T>::scalar(s), {x}, [x](GradTape<T>& t, std::size_t self) {
    const T g = (*t.grad_buffer(Var{self}))[0];
    if (Tensor<T>* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g;
  });
}

/// Elementwise product of equal-shaped tensors.
template <typename T>
Var mul(GradTape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: shape " + shape_str(av.shape()) + " != " + shape_str(bv.shape()));
  }
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
  return tape.push(std::move(out), {a, b}, [a, b](GradTape<T>& t, std::size_t self) {
    const Tensor<T>& g = *t.grad_buffer(Var{self});
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (Tensor<T>* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    if (Tensor<T>* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

}  // namespace slimconv::ops
