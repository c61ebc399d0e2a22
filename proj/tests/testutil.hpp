// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers. The finite-difference gradient checker is the
// independent oracle used against every differentiable op and both models.
#pragma once

#include <functional>
#include <vector>

#include "ocvp/core/ops.hpp"

namespace testutil {

using ocvp::core::Tape;
using ocvp::core::Tensor;
using ocvp::core::Var;

/// Builds a scalar loss from leaf vars bound to the given input tensors.
using LossBuilder = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t checked = 0;
};

inline double eval_loss(const std::vector<Tensor<double>>& inputs, const LossBuilder& build) {
  Tape<double> tape;
  tape.grad_enabled = false;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
  return build(tape, vars).val().data[0];
}

/// Central finite differences vs analytic gradients over every coordinate of
/// every input (or a strided sample when `stride` > 1).
inline GradCheck grad_check(std::vector<Tensor<double>> inputs, const LossBuilder& build,
                            double h = 1e-6, int64_t stride = 1) {
  // analytic pass
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var<double> loss = build(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v.id));
  }
  GradCheck res;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (int64_t i = 0; i < inputs[k].numel(); i += stride) {
      const double x0 = inputs[k].data[i];
      const double step = h * std::max(1.0, std::abs(x0));
      inputs[k].data[i] = x0 + step;
      const double fp = eval_loss(inputs, build);
      inputs[k].data[i] = x0 - step;
      const double fm = eval_loss(inputs, build);
      inputs[k].data[i] = x0;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[k].data[i];
      const double abs_err = std::abs(fd - an);
      // the floor keeps the ratio meaningful for coordinates whose true
      // gradient is itself ~0 (FD noise would otherwise dominate)
      const double rel = abs_err / std::max(1e-3, std::max(std::abs(fd), std::abs(an)));
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      ++res.checked;
    }
  }
  return res;
}

inline Tensor<double> randn(ocvp::core::Rng& rng, std::vector<int64_t> shape, double stddev = 1.0) {
  return ocvp::core::tensor_normal<double>(rng, std::move(shape), stddev);
}

}  // namespace testutil
