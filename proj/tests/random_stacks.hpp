#pragma once

#include "deepwarp/warp.hpp"

namespace testing_util {

using namespace deepwarp;

inline LocationSet uniform_points(const Domain& dom, Index n, RngStream& rng) {
  LocationSet s(n, dom.dim());
  for (Index i = 0; i < n; ++i)
    for (int k = 0; k < dom.dim(); ++k) s(i, k) = rng.uniform(dom.lower(k), dom.upper(k));
  return s;
}

// Möbius coefficients near the identity with the pole outside the input square.
inline void randomize_mobius(MobiusLayer& m, RngStream& rng, double spread = 0.3) {
  do {
    for (int k = 0; k < 8; ++k) m.a[k] = (k == 0 || k == 6 ? 1.0 : 0.0) + spread * rng.normal();
  } while (!m.pole_outside_input());
}

inline void randomize_weights(WarpStack& stack, RngStream& rng, double spread = 1.0) {
  for (auto& layer : stack.layers()) {
    if (auto* a = std::get_if<AwuLayer>(&layer)) {
      for (Index j = 0; j < a->tweights.size(); ++j)
        a->tweights(j) = (j == 0 ? 0.0 : -3.0) + spread * rng.normal();
    } else if (auto* r = std::get_if<RbfLayer>(&layer)) {
      r->tweight = kRbfIdentityTweight + spread * rng.normal();
    } else {
      randomize_mobius(std::get<MobiusLayer>(layer), rng);
    }
  }
}

// kind bits: 1 = AWU on both axes, 2 = SR-RBF(1), 4 = Möbius
inline WarpStack random_stack_2d(int kind, RngStream& rng, Index knots = 40) {
  WarpStack stack(Domain::unit(2));
  if (kind & 1) {
    stack.add_awu(0, 2 + static_cast<Index>(rng.uniform() * 8));
    stack.add_awu(1, 2 + static_cast<Index>(rng.uniform() * 8));
  }
  if (kind & 2) stack.add_sr_rbf(1);
  if (kind & 4) stack.add_mobius();
  randomize_weights(stack, rng);
  stack.set_knots(uniform_points(stack.domain(), knots, rng));
  return stack;
}

inline WarpStack random_stack_1d(RngStream& rng, Index knots = 40) {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(1, -0.5), hi = Eigen::VectorXd::Constant(1, 0.5);
  WarpStack stack(Domain(lo, hi));
  stack.add_awu(0, 2 + static_cast<Index>(rng.uniform() * 20), 20.0 + 180.0 * rng.uniform());
  randomize_weights(stack, rng);
  stack.set_knots(uniform_points(stack.domain(), knots, rng));
  return stack;
}

}  // namespace testing_util
