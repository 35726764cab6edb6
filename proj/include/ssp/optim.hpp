#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "ssp/autodiff.hpp"

namespace ssp {

/// Plain SGD with decoupled weight decay under a polynomial schedule.
struct OptimizerState {
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  double power = 0.9;
  std::size_t total_steps = 1;
  std::size_t step_count = 0;

  void validate() const;
};

/// base_lr * (1 - step_count / total_steps)^power
double poly_lr(const OptimizerState& state);

/// p <- p - lr * grad - lr * weight_decay * p for every trainable Variable,
/// then zeroes the gradients and advances step_count. Non-trainable entries
/// are skipped untouched.
void sgd_step(std::span<Variable* const> params, OptimizerState& state);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

/// ||a - n|| / max(||a||, ||n||, 1e-8) in the Euclidean norm.
double relative_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace ssp
