#pragma once

#include "deepwarp/core.hpp"

namespace deepwarp {

/// Adam with bias correction, minimising convention (params -= step).
/// Per-parameter learning rates; a zero rate freezes that coordinate.
struct AdamState {
  VectorXd first_moment;
  VectorXd second_moment;
  VectorXd learning_rate;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(Index n, double lr);
  explicit AdamState(VectorXd lr);
};

/// One update; returns the new parameter vector.
VectorXd adam_step(AdamState& state, const VectorXd& grad, const VectorXd& params);

}  // namespace deepwarp
