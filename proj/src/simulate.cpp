#include "deepwarp/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace deepwarp {

double eval_y11(double s) { return std::abs(s) > 0.2 ? -0.5 : 0.5; }

double eval_y12(double s) {
  if (s > -0.5 && s < 0.0) return std::exp(4.0 + 5.0 / (2.0 * s * (10.0 * s + 5.0)));
  if (s >= 0.2 && s <= 0.3) return 1.0;
  if (s > 0.3 && s <= 0.4) return -1.0;
  return 0.0;
}

VectorXd sample_matern_field(const LocationSet& locations, const MaternParams& p, RngStream& rng) {
  MaternParams q = p;
  q.noise = 1.0;  // unused by the covariance itself
  MatrixXd k = matern32_cov(locations, locations, q);
  k.diagonal().array() += 1e-8 * p.variance;
  Eigen::LLT<MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw IllConditionedError("Matérn covariance is not positive definite");
  return llt.matrixL() * rng.normal_vector(locations.rows());
}

VectorXd draw_siwgp(const WarpStack& stack, const ProcessLayer& process, const LocationSet& s, RngStream& rng) {
  const WeightCovFactor f = factor_weight_cov(process);
  const VectorXd w = f.chol * rng.normal_vector(process.rank());
  const LocationSet u = warp_forward(stack, s).warped;
  return bisquare_matrix(process, u) * w;
}

VectorXd add_noise(const VectorXd& y, double noise_var, RngStream& rng) {
  if (noise_var < 0.0) throw InvalidParameterError("noise variance must be nonnegative");
  if (noise_var == 0.0) return y;
  const double sd = std::sqrt(noise_var);
  VectorXd z = y;
  for (Index i = 0; i < z.size(); ++i) z(i) += sd * rng.normal();
  return z;
}

LocationSet sample_uniform(const Domain& domain, Index n, RngStream& rng) {
  LocationSet s(n, domain.dim());
  for (Index i = 0; i < n; ++i)
    for (int k = 0; k < domain.dim(); ++k) s(i, k) = rng.uniform(domain.lower(k), domain.upper(k));
  return s;
}

void draw_random_warp(WarpStack& stack, const WeightPrior& prior, RngStream& rng) {
  const double sd = std::sqrt(prior.variance);
  VectorXd p = stack.params();
  for (const auto& b : stack.blocks()) {
    if (b.random_weights) {
      const VectorXd mu = prior_mean(stack, b, prior);
      for (Index i = 0; i < b.size; ++i) p(b.offset + i) = mu(i) + sd * rng.normal();
    } else {
      MobiusLayer m = std::get<MobiusLayer>(stack.layers()[b.layer]);
      do {
        for (int k = 0; k < 8; ++k) m.a[k] = rng.normal();
      } while (!m.pole_outside_input());
      for (int k = 0; k < 8; ++k) p(b.offset + k) = m.a[k];
    }
  }
  stack.set_params(p);
}

MatrixXd synthetic_scene(int rows, int cols, RngStream& rng) {
  if (rows < 2 || cols < 2) throw InvalidParameterError("scene needs at least 2 rows and 2 columns");
  const VectorXd amp = rng.normal_vector(3);
  VectorXd phase(5);
  for (Index k = 0; k < 5; ++k) phase(k) = rng.uniform(0.0, 2.0 * M_PI);
  MatrixXd out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double x = j / (cols - 1.0), y = i / (rows - 1.0);
      const double front = std::tanh((y - 0.45 - 0.12 * std::sin(2.0 * M_PI * x + phase(0))) / 0.025);
      double background = 0.0;
      for (int k = 0; k < 3; ++k)
        background += amp(k) * std::cos(2.0 * M_PI * (0.7 * (k + 1) * x + 0.5 * (3 - k) * y) + phase(k));
      const double r2 = (x - 0.75) * (x - 0.75) + (y - 0.75) * (y - 0.75);
      const double storm = 40.0 * std::exp(-r2 / 0.01) * std::cos(40.0 * x + phase(3)) * std::cos(35.0 * y + phase(4));
      out(i, j) = 150.0 + 80.0 * front + 10.0 * background + storm;
    }
  }
  return out;
}

Simulation split_scene(const MatrixXd& grid, Index n_train, double noise_var, RngStream& rng) {
  if (grid.rows() < 2 || grid.cols() < 2) throw InvalidParameterError("scene needs at least 2 rows and 2 columns");
  if (noise_var < 0.0) throw InvalidParameterError("noise variance must be nonnegative");
  std::vector<Index> cells;
  for (Index c = 0; c < grid.size(); ++c)
    if (std::isfinite(grid(c / grid.cols(), c % grid.cols()))) cells.push_back(c);
  const Index total = static_cast<Index>(cells.size());
  if (n_train < 1 || n_train >= total)
    throw InvalidParameterError("training count must lie between 1 and the number of valid cells - 1");
  std::shuffle(cells.begin(), cells.end(), rng.engine());
  auto place = [&](Index c, LocationSet& s, Index row) {
    s(row, 0) = static_cast<double>(c % grid.cols()) / (grid.cols() - 1.0);
    s(row, 1) = static_cast<double>(c / grid.cols()) / (grid.rows() - 1.0);
    return grid(c / grid.cols(), c % grid.cols());
  };
  LocationSet s(n_train, 2);
  VectorXd y(n_train);
  for (Index k = 0; k < n_train; ++k) y(k) = place(cells[k], s, k);
  Simulation sim;
  sim.truth_locations.resize(total - n_train, 2);
  sim.truth.resize(total - n_train);
  for (Index k = n_train; k < total; ++k) sim.truth(k - n_train) = place(cells[k], sim.truth_locations, k - n_train);
  sim.data = Dataset(s, add_noise(y, noise_var, rng), noise_var > 0.0 ? noise_var : 1.0);
  return sim;
}

Simulation simulate(const SimSpec& spec) {
  if (spec.process == Process::Scene) {
    RngStream rng(spec.seed);
    const MatrixXd grid = synthetic_scene(spec.scene_rows, spec.scene_cols, rng);
    return split_scene(grid, spec.n, spec.noise_var, rng);
  }
  if (spec.n < 1) throw InvalidParameterError("simulation needs at least one observation");
  if (spec.noise_var < 0.0) throw InvalidParameterError("noise variance must be nonnegative");
  RngStream rng(spec.seed);
  const bool one_d = spec.process == Process::Y11 || spec.process == Process::Y12;
  Domain dom = spec.domain;
  if (dom.dim() == 0) {
    if (one_d) dom = Domain(VectorXd::Constant(1, -0.5), VectorXd::Constant(1, 0.5));
    else if (spec.stack) dom = spec.stack->domain();
    else dom = Domain::unit(2);
  }
  const int per_dim = spec.truth_per_dim > 0 ? spec.truth_per_dim : (dom.dim() == 1 ? 1001 : 100);

  Simulation sim;
  const LocationSet s = sample_uniform(dom, spec.n, rng);
  sim.truth_locations = regular_grid(dom, per_dim);
  VectorXd y;
  switch (spec.process) {
    case Process::Y11:
    case Process::Y12: {
      auto f = spec.process == Process::Y11 ? eval_y11 : eval_y12;
      y = s.col(0).unaryExpr(f);
      sim.truth = sim.truth_locations.col(0).unaryExpr(f);
      break;
    }
    case Process::Matern: {
      LocationSet all(s.rows() + sim.truth_locations.rows(), dom.dim());
      all << s, sim.truth_locations;
      const VectorXd field = sample_matern_field(all, spec.matern, rng);
      y = field.head(s.rows());
      sim.truth = field.tail(sim.truth_locations.rows());
      break;
    }
    case Process::SiwgpDraw: {
      if (!spec.stack || !spec.top) throw InvalidParameterError("SIWGP draw needs a warp stack and a top layer");
      WarpStack stack = *spec.stack;
      if (!stack.empty() && stack.knots().rows() == 0) stack.set_knots(regular_grid(stack.domain(), 50));
      if (spec.draw_weights) draw_random_warp(stack, spec.prior, rng);
      const WeightCovFactor f = factor_weight_cov(*spec.top);
      const VectorXd w = f.chol * rng.normal_vector(spec.top->rank());
      y = bisquare_matrix(*spec.top, warp_forward(stack, s).warped) * w;
      sim.truth = bisquare_matrix(*spec.top, warp_forward(stack, sim.truth_locations).warped) * w;
      sim.stack = stack;
      break;
    }
    case Process::Scene: break;  // handled above
  }
  const VectorXd z = add_noise(y, spec.noise_var, rng);
  sim.data = Dataset(s, z, spec.noise_var > 0.0 ? spec.noise_var : 1.0);
  return sim;
}

}  // namespace deepwarp
