// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ocvp/core/tape.hpp"

namespace ocvp::core {

/// Named trainable array with its gradient accumulator.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Registration-ordered parameter set owned by a model.
template <class T>
class ParamStore {
 public:
  Param<T>& add(std::string name, Tensor<T> init) {
    params_.push_back(Param<T>{std::move(name), std::move(init), {}});
    Param<T>& p = params_.back();
    p.grad = Tensor<T>::zeros(p.value.shape);
    return p;
  }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

 private:
  std::vector<Param<T>> params_;
};

/// Per-step leaf bindings of a ParamStore onto a tape. After backward,
/// collect_grads() copies node gradients into the store.
template <class T>
struct BoundParams {
  ParamStore<T>* store = nullptr;
  std::vector<Var<T>> vars;

  static BoundParams bind(Tape<T>& tape, ParamStore<T>& store) {
    BoundParams b;
    b.store = &store;
    b.vars.reserve(store.params().size());
    for (auto& p : store.params()) b.vars.push_back(tape.leaf(p.value, true));
    return b;
  }

  Var<T> operator[](size_t i) const { return vars[i]; }

  void collect_grads() {
    for (size_t i = 0; i < vars.size(); ++i) {
      auto& tape = *vars[i].tape;
      if (!tape.needs_grad(vars[i].id)) continue;
      const Tensor<T>& g = tape.grad(vars[i].id);
      Tensor<T>& dst = store->params()[i].grad;
      for (int64_t j = 0; j < g.numel(); ++j) dst.data[j] += g.data[j];
    }
  }
};

/// Linear warmup followed by cosine decay to zero.
struct LrSchedule {
  double base_lr = 1e-4;
  int64_t warmup_steps = 0;
  int64_t total_steps = 1;

  double at(int64_t step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const double span = static_cast<double>(std::max<int64_t>(1, total_steps - warmup_steps));
    const double progress = static_cast<double>(step - warmup_steps) / span;
    const double pi = 3.14159265358979323846;
    return base_lr * 0.5 * (1.0 + std::cos(pi * std::min(1.0, std::max(0.0, progress))));
  }
};

/// Adam over a ParamStore; moment buffers keyed by registration order.
template <class T>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(ParamStore<T>& store) : store_(&store) {
    m_.reserve(store.params().size());
    v_.reserve(store.params().size());
    for (auto& p : store.params()) {
      m_.push_back(Tensor<T>::zeros(p.value.shape));
      v_.push_back(Tensor<T>::zeros(p.value.shape));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    auto& ps = store_->params();
    for (size_t i = 0; i < ps.size(); ++i) {
      Tensor<T>& w = ps[i].value;
      const Tensor<T>& g = ps[i].grad;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (int64_t j = 0; j < w.numel(); ++j) {
        const double gj = static_cast<double>(g.data[j]);
        const double mj = beta1 * static_cast<double>(m.data[j]) + (1.0 - beta1) * gj;
        const double vj = beta2 * static_cast<double>(v.data[j]) + (1.0 - beta2) * gj * gj;
        m.data[j] = static_cast<T>(mj);
        v.data[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        w.data[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  ParamStore<T>* store_;
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace ocvp::core
