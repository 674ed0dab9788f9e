#pragma once

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd central_difference(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                                   double h = 1e-5) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max_i |b_i|
inline double relative_error(const VectorXd& a, const VectorXd& b) {
  const double scale = b.cwiseAbs().maxCoeff();
  return (a - b).cwiseAbs().maxCoeff() / (scale > 0.0 ? scale : 1.0);
}

// log N(z; 0, c) by a plain dense Cholesky of the full N x N covariance
inline double dense_gaussian_logpdf(const VectorXd& z, const MatrixXd& c) {
  Eigen::LLT<MatrixXd> llt(c);
  const MatrixXd l = llt.matrixL();
  const VectorXd y = l.triangularView<Eigen::Lower>().solve(z);
  return -0.5 * z.size() * std::log(2.0 * M_PI) - l.diagonal().array().log().sum() - 0.5 * y.squaredNorm();
}

inline MatrixXd random_spd(Eigen::Index r, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  MatrixXd b(r, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < r; ++j) b(i, j) = nd(gen);
  return b * b.transpose() + 0.5 * MatrixXd::Identity(r, r);
}

}  // namespace oracle
