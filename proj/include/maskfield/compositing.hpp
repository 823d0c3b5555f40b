#pragma once

#include <span>
#include <vector>

namespace maskfield {

/// Front-to-back alpha compositing weights w_i = T_i * alpha_i with
/// T_i = prod_{j<i} (1 - alpha_j). Returns the transmittance in front of each
/// sample in `transmittance` and the weights in `weights`.
inline void composite_weights(std::span<const double> alphas, std::vector<double>& transmittance,
                              std::vector<double>& weights) {
  transmittance.resize(alphas.size());
  weights.resize(alphas.size());
  double t = 1.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    transmittance[i] = t;
    weights[i] = t * alphas[i];
    t *= 1.0 - alphas[i];
  }
}

/// Reverse pass of the compositing recurrence. Given dL/dw_i for every sample
/// (`weight_grads`), writes dL/dalpha_i. Uses the suffix recurrence
/// R <- alpha_i q_i + (1 - alpha_i) R, which stays finite when alpha_i = 1.
inline void composite_backward(std::span<const double> alphas, std::span<const double> transmittance,
                               std::span<const double> weight_grads, std::span<double> alpha_grads) {
  double suffix = 0.0;
  for (std::size_t k = alphas.size(); k-- > 0;) {
    alpha_grads[k] = transmittance[k] * (weight_grads[k] - suffix);
    suffix = alphas[k] * weight_grads[k] + (1.0 - alphas[k]) * suffix;
  }
}

}  // namespace maskfield
