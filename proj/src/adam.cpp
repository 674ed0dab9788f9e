#include "deepwarp/adam.hpp"

#include <cmath>

namespace deepwarp {

AdamState::AdamState(Index n, double lr) : AdamState(VectorXd::Constant(n, lr)) {}

AdamState::AdamState(VectorXd lr)
    : first_moment(VectorXd::Zero(lr.size())),
      second_moment(VectorXd::Zero(lr.size())),
      learning_rate(std::move(lr)) {}

VectorXd adam_step(AdamState& s, const VectorXd& grad, const VectorXd& params) {
  if (grad.size() != params.size() || grad.size() != s.learning_rate.size())
    throw InvalidParameterError("Adam: gradient, parameter and state sizes differ");
  ++s.step;
  s.first_moment = s.beta1 * s.first_moment + (1.0 - s.beta1) * grad;
  s.second_moment = s.beta2 * s.second_moment + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  VectorXd out = params;
  for (Index i = 0; i < params.size(); ++i) {
    if (s.learning_rate(i) == 0.0) continue;
    const double mhat = s.first_moment(i) / c1;
    const double vhat = s.second_moment(i) / c2;
    out(i) -= s.learning_rate(i) * mhat / (std::sqrt(vhat) + s.epsilon);
  }
  return out;
}

}  // namespace deepwarp
