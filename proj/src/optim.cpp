#include "ssp/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace ssp {

void OptimizerState::validate() const {
  if (!(base_lr >= 0.0)) throw std::invalid_argument(fmt::format("optimizer: base_lr must be >= 0, got {}", base_lr));
  if (!(power > 0.0)) throw std::invalid_argument(fmt::format("optimizer: power must be > 0, got {}", power));
  if (weight_decay < 0.0) throw std::invalid_argument("optimizer: negative weight_decay");
  if (total_steps == 0) throw std::invalid_argument("optimizer: total_steps must be positive");
  if (step_count > total_steps) {
    throw std::invalid_argument(fmt::format("optimizer: step {} beyond total {}", step_count, total_steps));
  }
}

double poly_lr(const OptimizerState& state) {
  state.validate();
  const double progress = static_cast<double>(state.step_count) / static_cast<double>(state.total_steps);
  return state.base_lr * std::pow(1.0 - progress, state.power);
}

void sgd_step(std::span<Variable* const> params, OptimizerState& state) {
  state.validate();
  if (state.step_count >= state.total_steps) {
    throw std::out_of_range(fmt::format("sgd_step: schedule exhausted after {} steps", state.total_steps));
  }
  const double lr = poly_lr(state);
  for (Variable* p : params) {
    if (!p->trainable) continue;
    Tensor& v = p->value;
    Tensor& g = p->grad;
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] = v[i] - lr * g[i] - lr * state.weight_decay * v[i];
    v.check_finite("sgd_step(" + p->name + ")");
    p->zero_grad();
  }
  ++state.step_count;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError(fmt::format("finite_diff_grad: non-finite evaluation at element {}", i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeError("relative_error: " + shape_str(analytic.shape()) + " vs " + shape_str(numeric.shape()));
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[i];
    diff += (a - n) * (a - n);
    na += a * a;
    nn += n * n;
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

}  // namespace ssp
