#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "maskfield/common.hpp"

namespace maskfield {

struct AdamConfig {
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    require(learning_rate > 0.0, "adam: learning rate must be positive");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "adam: betas must lie in (0, 1)");
    require(epsilon > 0.0, "adam: epsilon must be positive");
  }
};

/// Moments for one parameter tensor.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  std::int64_t skipped = 0;  // steps rejected for non-finite gradients

  bool operator==(const OptimizerState&) const = default;
};

/// Bias-corrected Adam update. A gradient containing NaN/Inf leaves params
/// and moments untouched and bumps `state.skipped`. Returns false then.
inline bool adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                      const AdamConfig& cfg) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(), "adam_step: state size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) {
      ++state.skipped;
      return false;
    }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
  return true;
}

}  // namespace maskfield

namespace maskfield {

/// Lazy Adam: only `active` coordinates update their moments and values;
/// everything else is left untouched. Bias correction still uses the global
/// step count. If the inactive coordinates have never had a gradient this
/// matches adam_step bitwise.
inline bool adam_step_sparse(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                             const AdamConfig& cfg, std::span<const std::uint32_t> active) {
  require(params.size() == grads.size(), "adam_step_sparse: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  for (std::uint32_t i : active)
    if (!std::isfinite(grads[i])) {
      ++state.skipped;
      return false;
    }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::uint32_t i : active) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    params[i] -= cfg.learning_rate * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.epsilon);
  }
  return true;
}

}  // namespace maskfield
