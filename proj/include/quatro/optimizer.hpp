#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "quatro/numeric.hpp"

namespace quatro {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // weight decay fixed at 0

  void validate() const {
    require(learning_rate > 0.0, "OptimizerConfig: learning_rate must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0, "OptimizerConfig: beta1 in [0,1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "OptimizerConfig: beta2 in [0,1)");
    require(eps > 0.0, "OptimizerConfig: eps must be > 0");
  }
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// In-place parameter update. SGD: p -= lr*g. Adam: standard first/second
/// moment update with bias correction and zero weight decay.
inline void optimizer_step(std::span<double> params,
                           std::span<const double> gradient,
                           OptimizerState& state,
                           const OptimizerConfig& config) {
  config.validate();
  require(gradient.size() == params.size(), "optimizer_step: size mismatch");
  require(all_finite(gradient), "optimizer_step: non-finite gradient");
  if (config.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= config.learning_rate * gradient[i];
    }
    ++state.step;
    return;
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, state.step);
  const double bc2 = 1.0 - std::pow(config.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * gradient[i];
    state.v[i] = config.beta2 * state.v[i] +
                 (1.0 - config.beta2) * gradient[i] * gradient[i];
    double m_hat = state.m[i] / bc1;
    double v_hat = state.v[i] / bc2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

}  // namespace quatro
