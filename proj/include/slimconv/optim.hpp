// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

#include "slimconv/errors.hpp"
#include "slimconv/param_store.hpp"
#include "slimconv/tensor.hpp"

namespace slimconv {

/// Linear warmup 0 -> base_lr, then half-cosine decay to 0 at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                    double base_lr) {
  if (step > total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total " +
                        std::to_string(total_steps));
  }
  if (warmup_steps > total_steps) throw ContractError("lr_at: warmup longer than schedule");
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return base_lr;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Full-width moments shared by all subnetworks. Entries outside the active
/// set of a step keep their moments unchanged.
template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  static OptimizerState init(const ParamStore<T>& store) {
    OptimizerState s;
    for (const auto& p : store) {
      s.m.push_back(Tensor<T>::zeros(p.value.shape()));
      s.v.push_back(Tensor<T>::zeros(p.value.shape()));
    }
    return s;
  }
};

/// One AdamW step with decoupled weight decay (p -= lr * wd * p) on
/// ParamKind::Weight tensors only. When `active` is given, only the entries it
/// marks are touched; everything else stays bit-identical.
template <typename T>
void adamw_step(ParamStore<T>& store, const ParamGrads<T>& grads, const AccessTracker* active,
                double lr, const AdamWConfig& cfg, OptimizerState<T>& st) {
  if (grads.size() != store.size() || st.m.size() != store.size()) {
    throw ContractError("adamw_step: gradient/moment count does not match parameter count");
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable) continue;
    const T decay = p.kind == ParamKind::Weight ? static_cast<T>(1.0 - lr * cfg.weight_decay) : T{1};
    const auto* mask = active ? &active->marks(i) : nullptr;
    T* w = p.value.data();
    const T* g = grads[i].data();
    T* m = st.m[i].data();
    T* v = st.v[i].data();
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      if (mask && !(*mask)[j]) continue;
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      w[j] *= decay;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

/// Exponential moving average over every parameter.
template <typename T>
struct EmaState {
  ParamStore<T> shadow;
  double decay = 0.9999;

  static EmaState init(const ParamStore<T>& store, double decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw ContractError("EMA decay must lie in [0, 1]");
    return EmaState{store, decay};
  }

  /// shadow <- decay * shadow + (1 - decay) * param
  void update(const ParamStore<T>& store) {
    const T d = static_cast<T>(decay), a = static_cast<T>(1.0 - decay);
    for (std::size_t i = 0; i < store.size(); ++i) {
      T* s = shadow[i].value.data();
      const T* p = store[i].value.data();
      for (std::size_t j = 0; j < store[i].value.numel(); ++j) s[j] = d * s[j] + a * p[j];
    }
  }
};

}  // namespace slimconv
