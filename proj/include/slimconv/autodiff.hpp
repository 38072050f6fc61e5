// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "slimconv/errors.hpp"
#include "slimconv/tensor.hpp"

namespace slimconv {

/// Handle to a value recorded on a GradTape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Ordered record of executed operations. Each node holds its value, a
/// lazily-allocated gradient buffer and the rule that pushes its gradient
/// into its inputs. backward() replays the rules in reverse order.
///
/// Parameter leaves reference tensors owned elsewhere (the ParamStore) and
/// accumulate into an external gradient sink, so a tape never copies the
/// full-width weights.
template <typename T>
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&, std::size_t self)>;

  explicit GradTape(bool record = true) : record_(record) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor<T> value) { return push_node(std::move(value), nullptr, nullptr, false, {}); }

  Var leaf(Tensor<T> value, bool trainable) {
    return push_node(std::move(value), nullptr, nullptr, trainable && record_, {});
  }

  /// External parameter leaf; gradients accumulate into `grad_sink` when it
  /// is non-null (and must match the value's shape).
  Var param(const Tensor<T>& value, Tensor<T>* grad_sink) {
    if (grad_sink && grad_sink->shape() != value.shape()) {
      throw DimensionError("gradient sink shape " + shape_str(grad_sink->shape()) +
                           " does not match parameter shape " + shape_str(value.shape()));
    }
    return push_node(Tensor<T>{}, &value, grad_sink, grad_sink != nullptr && record_, {});
  }

  /// Records an op output. The backward rule is kept only when recording and
  /// at least one input requires a gradient.
  Var push(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    return push_node(std::move(value), nullptr, nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use; nullptr when
  /// the node does not take part in differentiation.
  Tensor<T>* grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return nullptr;
    if (n.sink) return n.sink;
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(value(v).shape());
    return &n.grad;
  }

  /// Gradient accumulated on an owned node (zeros if nothing flowed there).
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.sink) return *n.sink;
    if (n.grad.empty()) return Tensor<T>::zeros(value(v).shape());
    return n.grad;
  }

  void backward(Var loss) {
    if (value(loss).numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(value(loss).shape()));
    }
    if (!record_) throw ContractError("backward on a tape that was not recording");
    Tensor<T>* seed = grad_buffer(loss);
    if (!seed) return;
    (*seed)[0] += T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward) continue;
      if (n.grad.empty()) continue;  // no gradient reached this node
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* sink = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push_node(Tensor<T> value, const Tensor<T>* external, Tensor<T>* sink, bool requires_grad,
                BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    n.external = external;
    n.sink = sink;
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace slimconv
