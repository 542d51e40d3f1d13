// SPDX-License-Identifier: Apache-2.0
//
// Heavy-ball SGD with per-step weight decay and global-norm clipping. The
// momentum buffer is the optimizer memory that a causal break erases.

#pragma once

#include <optional>

#include "backflow/model.hpp"

namespace backflow {

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::optional<double> clip_norm;

  void validate() const;
};

struct OptimizerState {
  Vector momentum_buffer;

  static OptimizerState zeros(std::size_t n) { return {Vector::Zero(static_cast<Eigen::Index>(n))}; }
};

/// Rescales `g` to norm `clip_norm` when it is longer than that.
Vector clip_gradient(const Vector& g, std::optional<double> clip_norm);

/// g~ = clip(grad + wd * params); buf = mu * buf + g~; params -= lr * buf.
/// Throws NanGuardError (and leaves both arguments untouched) when the
/// gradient or the resulting update is not finite.
void step(ParamVector& params, OptimizerState& state, const Vector& grad,
          const OptimizerConfig& config);

/// Zeroes the momentum buffer. Parameters are not an input on purpose.
OptimizerState causal_break(const OptimizerState& state);

/// (1 - mu^k) / (1 - mu); equals 1 at mu = 0.
double amplification_factor(double momentum, int k);

}  // namespace backflow
