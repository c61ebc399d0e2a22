// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ocvp/core/tensor.hpp"

namespace ocvp::core {

template <class T>
class Tape;

/// Handle to a tape node. Cheap to copy; valid for the tape's lifetime.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& val() const;
};

/// Define-by-run reverse-mode tape. One tape per training step; nodes hold
/// the forward value, a lazily allocated gradient, and a backward closure.
template <class T>
class Tape {
 public:
  /// Backward closure: receives the tape and the id of its own output node.
  using BackFn = std::function<void(Tape&, int32_t)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackFn back;
    bool needs_grad = false;
    bool grad_touched = false;
  };

  bool grad_enabled = true;

  Var<T> leaf(Tensor<T> v, bool needs_grad = false) {
    return push_(std::move(v), needs_grad && grad_enabled, nullptr);
  }

  Var<T> make(Tensor<T> v, bool needs_grad, BackFn back) {
    needs_grad = needs_grad && grad_enabled;
    return push_(std::move(v), needs_grad, needs_grad ? std::move(back) : nullptr);
  }

  const Tensor<T>& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor<T>& value(int32_t id) { return nodes_[static_cast<size_t>(id)].value; }

  bool needs_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  /// Gradient buffer, allocated (zeros) on first access.
  Tensor<T>& grad(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.numel() == 0 && n.value.numel() > 0) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  /// Accumulate into a node's gradient; marks it live for the backward sweep.
  void accum_grad(int32_t id, const Tensor<T>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    Tensor<T>& dst = grad(id);
    OCVP_CHECK(dst.numel() == g.numel(), "accum_grad: shape mismatch");
    for (int64_t i = 0; i < g.numel(); ++i) dst.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
    n.grad_touched = true;
  }

  void mark_touched(int32_t id) { nodes_[static_cast<size_t>(id)].grad_touched = true; }

  /// Reverse sweep from a scalar loss node.
  void backward(Var<T> loss) {
    OCVP_CHECK(loss.valid() && loss.tape == this, "backward: var not on this tape");
    OCVP_CHECK(value(loss.id).numel() == 1, "backward: loss must be scalar, got "
                                                << shape_str(value(loss.id).shape));
    Node& ln = nodes_[static_cast<size_t>(loss.id)];
    OCVP_CHECK(ln.needs_grad, "backward: loss does not require grad");
    grad(loss.id).data[0] = T(1);
    ln.grad_touched = true;
    for (int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.grad_touched && n.back) n.back(*this, i);
    }
  }

  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  Var<T> push_(Tensor<T>&& v, bool needs_grad, BackFn back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

template <class T>
const Tensor<T>& Var<T>::val() const {
  return tape->value(id);
}

}  // namespace ocvp::core
