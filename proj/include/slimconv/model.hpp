// SPDX-License-Identifier: Apache-2.0
#pragma once

// ConvNeXt over a shared ParamStore. Block i runs on the first
// floor(p_i * C) channels of its input; its output is zero-padded back to C
// channels before the residual add. Stem, downsamplers and head always run
// at full width.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "slimconv/autodiff.hpp"
#include "slimconv/config.hpp"
#include "slimconv/kv.hpp"
#include "slimconv/ops.hpp"
#include "slimconv/param_store.hpp"
#include "slimconv/random.hpp"
#include "slimconv/slimming.hpp"
#include "slimconv/tensor.hpp"

namespace slimconv {

namespace param_names {

inline std::string stage(std::size_t s) { return "stage" + std::to_string(s); }
inline std::string block(std::size_t s, std::size_t b) {
  return stage(s) + ".block" + std::to_string(b);
}
inline std::string downsample(std::size_t s) { return stage(s) + ".downsample"; }

}  // namespace param_names

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind;
};

/// Name, shape and kind of every parameter of `cfg`, in store order.
inline std::vector<ParamSpec> param_layout(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  auto norm = [&](const std::string& prefix, std::size_t c) {
    out.push_back({prefix + ".weight", {c}, ParamKind::NormWeight});
    out.push_back({prefix + ".bias", {c}, ParamKind::NormBias});
  };
  const auto& d = cfg.dims;
  out.push_back({"stem.conv.weight", {kStemStride, kStemStride, cfg.in_channels, d[0]}, ParamKind::Weight});
  out.push_back({"stem.conv.bias", {d[0]}, ParamKind::Bias});
  norm("stem.norm", d[0]);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (s > 0) {
      const std::string ds = param_names::downsample(s);
      norm(ds + ".norm", d[s - 1]);
      out.push_back({ds + ".conv.weight", {kDownsampleStride, kDownsampleStride, d[s - 1], d[s]},
                     ParamKind::Weight});
      out.push_back({ds + ".conv.bias", {d[s]}, ParamKind::Bias});
    }
    const std::size_t c = d[s];
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      const std::string p = param_names::block(s, b);
      out.push_back({p + ".dw.weight", {kBlockKernel, kBlockKernel, c}, ParamKind::Weight});
      out.push_back({p + ".dw.bias", {c}, ParamKind::Bias});
      norm(p + ".norm", c);
      out.push_back({p + ".pw_expand.weight", {c, kExpansion * c}, ParamKind::Weight});
      out.push_back({p + ".pw_expand.bias", {kExpansion * c}, ParamKind::Bias});
      out.push_back({p + ".pw_project.weight", {kExpansion * c, c}, ParamKind::Weight});
      out.push_back({p + ".pw_project.bias", {c}, ParamKind::Bias});
      if (cfg.layer_scale) out.push_back({p + ".layer_scale", {c}, ParamKind::LayerScale});
    }
  }
  norm("head.norm", d[3]);
  out.push_back({"head.fc.weight", {d[3], cfg.num_classes}, ParamKind::Weight});
  out.push_back({"head.fc.bias", {cfg.num_classes}, ParamKind::Bias});
  return out;
}

/// Creates every parameter of `cfg`: truncated normal (std 0.02) conv and
/// linear weights, zero biases, unit/zero LayerNorm affine and layer scale at
/// cfg.layer_scale_init.
template <typename T = float>
ParamStore<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore<T> store;
  for (auto& spec : param_layout(cfg)) {
    Tensor<T> t(spec.shape);
    switch (spec.kind) {
      case ParamKind::Weight:
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_normal(0.02));
        break;
      case ParamKind::NormWeight: t.fill(T{1}); break;
      case ParamKind::LayerScale: t.fill(static_cast<T>(cfg.layer_scale_init)); break;
      case ParamKind::Bias:
      case ParamKind::NormBias: break;
    }
    store.add(std::move(spec.name), std::move(t), spec.kind);
  }
  return store;
}

inline KeyValues model_config_to_kv(const ModelConfig& cfg) {
  KeyValues kv;
  auto join = [](const auto& a) {
    std::string s;
    for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i]);
    return s;
  };
  kv.set("depths", join(cfg.depths));
  kv.set("dims", join(cfg.dims));
  kv.set_num("num_classes", cfg.num_classes);
  kv.set_num("drop_path_rate", cfg.drop_path_rate);
  kv.set("input_size", std::to_string(cfg.input_h) + "," + std::to_string(cfg.input_w));
  kv.set_num("in_channels", cfg.in_channels);
  kv.set("layer_scale", cfg.layer_scale ? "true" : "false");
  kv.set_num("layer_scale_init", cfg.layer_scale_init);
  return kv;
}

/// Reads model fields from `kv`, starting from `base` for absent keys.
inline ModelConfig model_config_from_kv(const KeyValues& kv, ModelConfig base) {
  auto four = [&](const char* key, std::array<std::size_t, kNumStages>& dst) {
    if (!kv.has(key)) return;
    const auto v = KeyValues::to_sizes(key, kv.get(key));
    if (v.size() != kNumStages) throw ConfigError(std::string(key) + " needs 4 entries");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  four("depths", base.depths);
  four("dims", base.dims);
  base.num_classes = kv.get_size_or("num_classes", base.num_classes);
  base.drop_path_rate = kv.get_double_or("drop_path_rate", base.drop_path_rate);
  if (kv.has("input_size")) {
    const auto v = KeyValues::to_sizes("input_size", kv.get("input_size"));
    if (v.size() == 1) {
      base.input_h = base.input_w = v[0];
    } else if (v.size() == 2) {
      base.input_h = v[0];
      base.input_w = v[1];
    } else {
      throw ConfigError("input_size needs 1 or 2 entries");
    }
  }
  base.in_channels = kv.get_size_or("in_channels", base.in_channels);
  base.layer_scale = kv.get_bool_or("layer_scale", base.layer_scale);
  base.layer_scale_init = kv.get_double_or("layer_scale_init", base.layer_scale_init);
  base.validate();
  return base;
}

/// Serializable topology: the config plus one line per block.
inline KeyValues topology_description(const ModelConfig& cfg) {
  KeyValues kv = model_config_to_kv(cfg);
  kv.set_num("num_blocks", cfg.num_blocks());
  const auto specs = block_specs(cfg);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& b = specs[i];
    std::ostringstream os;
    os.precision(17);
    os << "stage=" << b.stage << " index=" << b.index << " channels=" << b.channels
       << " expansion=" << b.expansion << " kernel=" << b.kernel << " drop_prob=" << b.drop_prob;
    kv.set("block." + std::to_string(i), os.str());
  }
  return kv;
}

enum class Mode { Train, Eval };

template <typename T>
struct ForwardOptions {
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;               // required for drop-path in train mode
  AccessTracker* tracker = nullptr;  // records every parameter entry read
  ParamGrads<T>* grads = nullptr;    // gradient sinks, parallel to the store
  T ln_eps = T(1e-6);
};

/// Stochastic depth on a residual branch: each sample is kept with
/// probability 1 - prob and rescaled by 1 / (1 - prob). Identity in eval
/// mode or when prob == 0.
template <typename T>
Var drop_path(GradTape<T>& tape, Var x, double prob, Mode mode, Rng* rng) {
  if (!(prob >= 0.0 && prob < 1.0)) throw ContractError("drop_path: prob must lie in [0, 1)");
  if (mode == Mode::Eval || prob == 0.0) return x;
  if (!rng) throw ContractError("drop_path: train mode needs an rng");
  const std::size_t n = tape.value(x).dim(0);
  std::vector<T> factors(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - prob));
  for (std::size_t i = 0; i < n; ++i) factors[i] = rng->uniform() >= prob ? keep_scale : T{0};
  return ops::scale_samples(tape, x, std::move(factors));
}

/// Logits (N, num_classes) of the subnetwork selected by `plist`.
template <typename T>
Var forward(GradTape<T>& tape, const ParamStore<T>& store, const ModelConfig& cfg, Var x,
            const PList& plist, const ForwardOptions<T>& opt = {}) {
  const auto widths = active_widths(plist, cfg.block_channels());
  const Shape& xs = tape.value(x).shape();
  if (xs.size() != 4) throw DimensionError("forward: input must be (N, H, W, C), got " + shape_str(xs));
  if (xs[3] != cfg.in_channels) {
    throw DimensionError("forward: axis 'C' of input is " + std::to_string(xs[3]) + ", expected " +
                         std::to_string(cfg.in_channels));
  }
  if (xs[1] % 32 != 0 || xs[2] % 32 != 0) {
    throw DimensionError("forward: spatial size " + std::to_string(xs[1]) + "x" +
                         std::to_string(xs[2]) + " must be divisible by 32");
  }
  if (opt.mode == Mode::Train && (xs[1] != cfg.input_h || xs[2] != cfg.input_w)) {
    throw DimensionError("forward: training input must be " + std::to_string(cfg.input_h) + "x" +
                         std::to_string(cfg.input_w));
  }

  auto param = [&](const std::string& name) {
    const std::size_t i = store.index(name);
    return std::pair{tape.param(store[i].value, opt.grads ? &(*opt.grads)[i] : nullptr), i};
  };
  auto full = [&](const std::string& name) {
    auto [v, i] = param(name);
    if (opt.tracker) opt.tracker->mark_all(i);
    return v;
  };
  auto prefix = [&](const std::string& name, const Shape& extents) {
    auto [v, i] = param(name);
    if (opt.tracker) opt.tracker->mark_prefix(i, extents);
    return ops::narrow(tape, v, extents);
  };

  const T eps = opt.ln_eps;
  Var h = ops::patchify(tape, x, full("stem.conv.weight"), full("stem.conv.bias"), kStemStride);
  h = ops::layer_norm(tape, h, full("stem.norm.weight"), full("stem.norm.bias"), eps);

  const auto specs = block_specs(cfg);
  std::size_t bi = 0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (s > 0) {
      const std::string ds = param_names::downsample(s);
      h = ops::layer_norm(tape, h, full(ds + ".norm.weight"), full(ds + ".norm.bias"), eps);
      h = ops::patchify(tape, h, full(ds + ".conv.weight"), full(ds + ".conv.bias"),
                        kDownsampleStride);
    }
    for (std::size_t b = 0; b < cfg.depths[s]; ++b, ++bi) {
      const std::string p = param_names::block(s, b);
      const std::size_t c = widths[bi];
      const std::size_t e = kExpansion * c;
      Var y = ops::narrow_channels(tape, h, c);
      y = ops::depthwise(tape, y, prefix(p + ".dw.weight", {kBlockKernel, kBlockKernel, c}),
                         prefix(p + ".dw.bias", {c}));
      y = ops::layer_norm(tape, y, prefix(p + ".norm.weight", {c}), prefix(p + ".norm.bias", {c}),
                          eps);
      y = ops::pointwise(tape, y, prefix(p + ".pw_expand.weight", {c, e}),
                         prefix(p + ".pw_expand.bias", {e}));
      y = ops::gelu(tape, y);
      y = ops::pointwise(tape, y, prefix(p + ".pw_project.weight", {e, c}),
                         prefix(p + ".pw_project.bias", {c}));
      if (cfg.layer_scale) y = ops::scale_channels(tape, y, prefix(p + ".layer_scale", {c}));
      y = drop_path(tape, y, specs[bi].drop_prob, opt.mode, opt.rng);
      h = ops::residual_add_zero_pad(tape, y, h);
    }
  }

  h = ops::global_avg_pool(tape, h);
  h = ops::layer_norm(tape, h, full("head.norm.weight"), full("head.norm.bias"), eps);
  return ops::linear(tape, h, full("head.fc.weight"), full("head.fc.bias"));
}

/// Eval-mode logits without recording gradients.
template <typename T>
Tensor<T> predict(const ParamStore<T>& store, const ModelConfig& cfg, const Tensor<T>& images,
                  const PList& plist, AccessTracker* tracker = nullptr) {
  GradTape<T> tape(false);
  Var x = tape.constant(images);
  ForwardOptions<T> opt;
  opt.tracker = tracker;
  return tape.value(forward(tape, store, cfg, x, plist, opt));
}

}  // namespace slimconv
