// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "slimconv/errors.hpp"
#include "slimconv/tensor.hpp"

namespace slimconv {

enum class ParamKind : std::uint8_t {
  Weight,      // conv / linear weights, the only kind that takes weight decay
  Bias,
  NormWeight,
  NormBias,
  LayerScale,
};

inline const char* param_kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::Weight: return "weight";
    case ParamKind::Bias: return "bias";
    case ParamKind::NormWeight: return "norm_weight";
    case ParamKind::NormBias: return "norm_bias";
    case ParamKind::LayerScale: return "layer_scale";
  }
  return "?";
}

inline ParamKind param_kind_from_name(const std::string& s) {
  for (auto k : {ParamKind::Weight, ParamKind::Bias, ParamKind::NormWeight, ParamKind::NormBias,
                 ParamKind::LayerScale})
    if (s == param_kind_name(k)) return k;
  throw FormatError("unknown parameter kind '" + s + "'");
}

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  ParamKind kind = ParamKind::Weight;
  bool trainable = true;
};

/// Full-width weights shared by every subnetwork. Each tensor has exactly one
/// owner name; subnetworks read prefixes of these tensors.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value, ParamKind kind, bool trainable = true) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back(Param<T>{std::move(name), std::move(value), kind, trainable});
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_.at(i); }
  const Param<T>& operator[](std::size_t i) const { return params_.at(i); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
    return it->second;
  }

  const Tensor<T>& value(const std::string& name) const { return params_[index(name)].value; }
  Tensor<T>& value(const std::string& name) { return params_[index(name)].value; }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.kind, p.trainable);
    return out;
  }

  /// FNV-1a over names and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& p : params_) {
      mix(p.name.data(), p.name.size());
      mix(p.value.data(), p.value.numel() * sizeof(T));
    }
    return h;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      const auto& x = a.params_[i];
      const auto& y = b.params_[i];
      if (x.name != y.name || x.kind != y.kind || x.trainable != y.trainable) return false;
      if (x.value.shape() != y.value.shape()) return false;
      if (std::memcmp(x.value.data(), y.value.data(), x.value.numel() * sizeof(T)) != 0)
        return false;
    }
    return true;
  }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One gradient tensor per parameter, parallel to the store.
template <typename T>
using ParamGrads = std::vector<Tensor<T>>;

template <typename T>
ParamGrads<T> zero_grads(const ParamStore<T>& store) {
  ParamGrads<T> g;
  g.reserve(store.size());
  for (const auto& p : store) g.push_back(Tensor<T>::zeros(p.value.shape()));
  return g;
}

/// Records which parameter entries a forward pass reads. Every read of a
/// parameter is a prefix box, and the tracker marks each entry inside it.
class AccessTracker {
 public:
  AccessTracker() = default;

  template <typename T>
  explicit AccessTracker(const ParamStore<T>& store) {
    shapes_.reserve(store.size());
    marks_.reserve(store.size());
    for (const auto& p : store) {
      shapes_.push_back(p.value.shape());
      marks_.emplace_back(p.value.numel(), std::uint8_t{0});
    }
  }

  void mark_prefix(std::size_t param, const Shape& extents) {
    const Shape& full = shapes_.at(param);
    if (extents.size() != full.size()) throw DimensionError("access tracker: rank mismatch");
    const auto strides = row_major_strides(full);
    const std::size_t rank = full.size();
    std::vector<std::size_t> idx(rank, 0);
    const std::size_t total = shape_numel(extents);
    auto& m = marks_[param];
    for (std::size_t k = 0; k < total; ++k) {
      std::size_t off = 0;
      for (std::size_t a = 0; a < rank; ++a) off += idx[a] * strides[a];
      m[off] = 1;
      for (std::size_t a = rank; a-- > 0;) {
        if (++idx[a] < extents[a]) break;
        idx[a] = 0;
      }
    }
  }

  void mark_all(std::size_t param) { mark_prefix(param, shapes_.at(param)); }

  std::size_t num_params() const noexcept { return marks_.size(); }
  const std::vector<std::uint8_t>& marks(std::size_t param) const { return marks_.at(param); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& m : marks_)
      for (auto v : m) n += v;
    return n;
  }

  std::size_t count(std::size_t param) const {
    std::size_t n = 0;
    for (auto v : marks_.at(param)) n += v;
    return n;
  }

  /// Every entry touched here is also touched by `other`.
  bool subset_of(const AccessTracker& other) const {
    if (other.marks_.size() != marks_.size()) return false;
    for (std::size_t p = 0; p < marks_.size(); ++p)
      for (std::size_t i = 0; i < marks_[p].size(); ++i)
        if (marks_[p][i] && !other.marks_[p][i]) return false;
    return true;
  }

 private:
  std::vector<Shape> shapes_;
  std::vector<std::vector<std::uint8_t>> marks_;
};

}  // namespace slimconv
