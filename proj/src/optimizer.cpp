// SPDX-License-Identifier: Apache-2.0

#include "backflow/optimizer.hpp"

#include <cmath>
#include <string>

namespace backflow {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optimizer lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("optimizer momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
}

Vector clip_gradient(const Vector& g, std::optional<double> clip_norm) {
  if (!clip_norm) return g;
  const double norm = g.norm();
  if (norm <= *clip_norm) return g;
  return g * (*clip_norm / norm);
}

void step(ParamVector& params, OptimizerState& state, const Vector& grad,
          const OptimizerConfig& config) {
  if (grad.size() != params.values.size() ||
      state.momentum_buffer.size() != params.values.size()) {
    throw DimensionError("optimizer step: gradient, buffer and parameters differ in length");
  }
  if (!grad.allFinite()) throw NanGuardError("non-finite gradient", config.lr);
  Vector applied = grad;
  if (config.weight_decay != 0.0) applied += config.weight_decay * params.values;
  applied = clip_gradient(applied, config.clip_norm);
  Vector buffer = config.momentum * state.momentum_buffer + applied;
  Vector next = params.values - config.lr * buffer;
  if (!buffer.allFinite() || !next.allFinite()) {
    throw NanGuardError("non-finite parameter update", config.lr);
  }
  state.momentum_buffer = std::move(buffer);
  params.values = std::move(next);
}

OptimizerState causal_break(const OptimizerState& state) {
  return OptimizerState::zeros(static_cast<std::size_t>(state.momentum_buffer.size()));
}

double amplification_factor(double momentum, int k) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("amplification_factor: momentum must lie in [0, 1)");
  }
  if (k < 1) throw std::invalid_argument("amplification_factor: k must be positive");
  if (momentum == 0.0) return 1.0;
  return (1.0 - std::pow(momentum, k)) / (1.0 - momentum);
}

}  // namespace backflow
