#include "deepwarp/baseline.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "deepwarp/adam.hpp"

namespace deepwarp {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kVarianceFloor = 1e-10;

void check_params(const MaternParams& p) {
  if (!(p.variance > 0.0) || !(p.range > 0.0) || !(p.noise > 0.0))
    throw InvalidParameterError("Matérn parameters must be positive");
}

// Cholesky of K + noise I, retrying once with 1e-8 variance jitter.
Eigen::LLT<MatrixXd> factor(const MatrixXd& k, double variance) {
  Eigen::LLT<MatrixXd> llt(k);
  if (llt.info() == Eigen::Success) return llt;
  MatrixXd kj = k;
  kj.diagonal().array() += 1e-8 * variance;
  llt.compute(kj);
  if (llt.info() != Eigen::Success) throw IllConditionedError("GP covariance is not positive definite");
  return llt;
}

}  // namespace

double matern32(double h, const MaternParams& p) {
  const double x = kSqrt3 * h / p.range;
  return p.variance * (1.0 + x) * std::exp(-x);
}

MatrixXd matern32_cov(const LocationSet& a, const LocationSet& b, const MaternParams& p) {
  check_params(p);
  MatrixXd k(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j) k(i, j) = matern32((a.row(i) - b.row(j)).norm(), p);
  return k;
}

double gp_loglik(const MaternParams& p, const Dataset& data, VectorXd* grad) {
  check_params(p);
  const Index n = data.size();
  MatrixXd k(n, n);
  MatrixXd dk_drange;
  if (grad) dk_drange.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      const double x = kSqrt3 * (data.locations.row(i) - data.locations.row(j)).norm() / p.range;
      const double e = std::exp(-x);
      k(i, j) = k(j, i) = p.variance * (1.0 + x) * e;
      // d/d log rho of sigma2 (1 + x) e^{-x} = sigma2 x^2 e^{-x}
      if (grad) dk_drange(i, j) = dk_drange(j, i) = p.variance * x * x * e;
    }
  }
  MatrixXd c = k;
  c.diagonal().array() += p.noise;
  const Eigen::LLT<MatrixXd> llt = factor(c, p.variance);
  const MatrixXd l = llt.matrixL();
  const VectorXd alpha = llt.solve(data.z);
  const double value = -0.5 * n * kLog2Pi - l.diagonal().array().log().sum() - 0.5 * data.z.dot(alpha);
  if (grad) {
    // dL/dtheta = tr((alpha alpha' - C^{-1}) dC/dtheta) / 2
    MatrixXd w = alpha * alpha.transpose() - llt.solve(MatrixXd::Identity(n, n));
    grad->resize(3);
    (*grad)(0) = 0.5 * (w.array() * k.array()).sum();
    (*grad)(1) = 0.5 * (w.array() * dk_drange.array()).sum();
    (*grad)(2) = 0.5 * p.noise * w.trace();
  }
  return value;
}

MaternParams gp_initial_params(const Dataset& data) {
  const double var = std::max(sample_variance(data.z), kVarianceFloor);
  const Domain box = Domain::bounding_box(data.locations);
  double side = 0.0;
  for (int k = 0; k < box.dim(); ++k) side = std::max(side, box.side(k));
  MaternParams p;
  p.variance = var;
  p.range = side > 0.0 ? 0.25 * side : 1.0;
  p.noise = 0.1 * var;
  return p;
}

MaternParams gp_fit_ml(const Dataset& data, const GpOptions& options) {
  if (data.size() < 2) throw DegenerateDataError("need at least two observations");
  const MaternParams init = gp_initial_params(data);
  VectorXd x(3);
  x << std::log(init.variance), std::log(init.range), std::log(init.noise);
  auto unpack = [](const VectorXd& v) { return MaternParams{std::exp(v(0)), std::exp(v(1)), std::exp(v(2))}; };
  AdamState adam(3, options.learning_rate);
  double best = -std::numeric_limits<double>::infinity();
  VectorXd best_x = x;
  for (int it = 0; it <= options.steps; ++it) {
    VectorXd g;
    double ll;
    try {
      ll = gp_loglik(unpack(x), data, it < options.steps ? &g : nullptr);
    } catch (const IllConditionedError&) {
      break;
    }
    if (ll > best) {
      best = ll;
      best_x = x;
    }
    if (it == options.steps || !g.allFinite()) break;
    x = adam_step(adam, -g, x);
  }
  if (!std::isfinite(best)) throw IllConditionedError("GP likelihood is not finite at the starting point");
  return unpack(best_x);
}

PredictiveSummary gp_predict(const MaternParams& p, const Dataset& data, const LocationSet& s_star,
                             bool include_noise) {
  check_params(p);
  if (s_star.cols() != data.dim()) throw InvalidParameterError("prediction locations have the wrong dimension");
  MatrixXd c = matern32_cov(data.locations, data.locations, p);
  c.diagonal().array() += p.noise;
  const Eigen::LLT<MatrixXd> llt = factor(c, p.variance);
  const MatrixXd ks = matern32_cov(data.locations, s_star, p);
  const VectorXd mean = ks.transpose() * llt.solve(data.z);
  const MatrixXd v = llt.matrixL().solve(ks);
  VectorXd var = (p.variance - v.colwise().squaredNorm().array()).matrix();
  if (var.size() > 0 && var.minCoeff() < -1e-10)
    std::cerr << "warning: negative GP predictive variance " << var.minCoeff() << " clipped to 0\n";
  if (include_noise) var.array() += p.noise;
  return gaussian_summary(mean, var);
}

}  // namespace deepwarp
