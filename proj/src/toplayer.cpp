#include "deepwarp/toplayer.hpp"

#include <algorithm>
#include <cmath>

namespace deepwarp {

ProcessLayer place_centroids(const Domain& domain, int per_dim, double sigma2, double length_scale) {
  if (per_dim < 1) throw InvalidParameterError("need at least one centroid per dimension");
  if (!(sigma2 > 0.0) || !(length_scale > 0.0))
    throw InvalidParameterError("weight covariance parameters must be positive");
  const int d = domain.dim();
  ProcessLayer layer;
  layer.sigma2 = sigma2;
  layer.length_scale = length_scale;
  ProcessLayer::Grid grid;
  grid.lower = domain.lower;
  grid.per_dim = per_dim;
  grid.spacing.resize(d);
  for (int k = 0; k < d; ++k)
    grid.spacing(k) = per_dim > 1 ? domain.side(k) / (per_dim - 1) : domain.side(k);
  Index r = per_dim;
  if (d == 2) r *= per_dim;
  layer.centroids.resize(r, d);
  for (Index j = 0; j < r; ++j) {
    const Index c = j % per_dim;
    const Index row = j / per_dim;
    layer.centroids(j, 0) = per_dim > 1 ? grid.lower(0) + grid.spacing(0) * c
                                        : 0.5 * (domain.lower(0) + domain.upper(0));
    if (d == 2)
      layer.centroids(j, 1) = per_dim > 1 ? grid.lower(1) + grid.spacing(1) * row
                                          : 0.5 * (domain.lower(1) + domain.upper(1));
  }
  layer.apertures = VectorXd::Constant(r, kApertureSpacings * grid.spacing.maxCoeff());
  if (per_dim > 1) layer.grid = grid;
  return layer;
}

double bisquare(double distance, double aperture) {
  if (distance >= aperture) return 0.0;
  const double t = distance / aperture;
  const double v = 1.0 - t * t;
  return v * v;
}

namespace {

// Calls fn(j) for every centroid j that may have u inside its support.
template <typename Fn>
void for_each_candidate(const ProcessLayer& layer, const double* u, Fn&& fn) {
  if (!layer.grid) {
    for (Index j = 0; j < layer.rank(); ++j) fn(j);
    return;
  }
  const auto& g = *layer.grid;
  const int d = layer.dim();
  const double reach = layer.apertures.maxCoeff();
  Index lo[2] = {0, 0}, hi[2] = {0, 0};
  for (int k = 0; k < d; ++k) {
    const double a = (u[k] - reach - g.lower(k)) / g.spacing(k);
    const double b = (u[k] + reach - g.lower(k)) / g.spacing(k);
    lo[k] = std::max<Index>(0, static_cast<Index>(std::ceil(a)));
    hi[k] = std::min<Index>(g.per_dim - 1, static_cast<Index>(std::floor(b)));
  }
  if (d == 1) {
    for (Index c = lo[0]; c <= hi[0]; ++c) fn(c);
  } else {
    for (Index row = lo[1]; row <= hi[1]; ++row)
      for (Index c = lo[0]; c <= hi[0]; ++c) fn(row * g.per_dim + c);
  }
}

}  // namespace

SparseRowMatrix bisquare_matrix(const ProcessLayer& layer, const LocationSet& u) {
  if (u.cols() != layer.dim()) throw InvalidParameterError("location dimension does not match basis");
  const int d = layer.dim();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(u.rows()) * (d == 1 ? 4 : 12));
  for (Index i = 0; i < u.rows(); ++i) {
    double p[2] = {u(i, 0), d == 2 ? u(i, 1) : 0.0};
    for_each_candidate(layer, p, [&](Index j) {
      double dist2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = p[k] - layer.centroids(j, k);
        dist2 += diff * diff;
      }
      const double delta = layer.apertures(j);
      if (dist2 < delta * delta) {
        const double v = 1.0 - dist2 / (delta * delta);
        trip.emplace_back(i, j, v * v);
      }
    });
  }
  SparseRowMatrix a(u.rows(), layer.rank());
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

MatrixXd bisquare_matrix_dense(const ProcessLayer& layer, const LocationSet& u) {
  MatrixXd a(u.rows(), layer.rank());
  for (Index i = 0; i < u.rows(); ++i)
    for (Index j = 0; j < layer.rank(); ++j)
      a(i, j) = bisquare((u.row(i) - layer.centroids.row(j)).norm(), layer.apertures(j));
  return a;
}

MatrixXd bisquare_backward(const ProcessLayer& layer, const LocationSet& u, const SparseRowMatrix& dbasis) {
  const int d = layer.dim();
  MatrixXd du = MatrixXd::Zero(u.rows(), d);
  for (Index i = 0; i < dbasis.outerSize(); ++i) {
    for (SparseRowMatrix::InnerIterator it(dbasis, i); it; ++it) {
      const Index j = it.col();
      const double delta2 = layer.apertures(j) * layer.apertures(j);
      double dist2 = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = u(i, k) - layer.centroids(j, k);
        dist2 += diff * diff;
      }
      if (dist2 >= delta2) continue;
      // d/du (1 - |u-c|^2/delta^2)^2 = -4 (1 - |u-c|^2/delta^2) (u - c) / delta^2
      const double f = -4.0 * (1.0 - dist2 / delta2) / delta2 * it.value();
      for (int k = 0; k < d; ++k) du(i, k) += f * (u(i, k) - layer.centroids(j, k));
    }
  }
  return du;
}

MatrixXd weight_cov(const ProcessLayer& layer) {
  if (!(layer.sigma2 > 0.0) || !(layer.length_scale > 0.0))
    throw InvalidParameterError("weight covariance parameters must be positive");
  const Index r = layer.rank();
  MatrixXd cov(r, r);
  for (Index j = 0; j < r; ++j) {
    cov(j, j) = layer.sigma2;
    for (Index k = 0; k < j; ++k) {
      const double dist = (layer.centroids.row(j) - layer.centroids.row(k)).norm();
      cov(j, k) = cov(k, j) = layer.sigma2 * std::exp(-dist / layer.length_scale);
    }
  }
  return cov;
}

WeightCovFactor factor_weight_cov(const ProcessLayer& layer) {
  WeightCovFactor f;
  f.cov = weight_cov(layer);
  const Index r = layer.rank();
  f.dcov_dlog_length.resize(r, r);
  for (Index j = 0; j < r; ++j) {
    f.dcov_dlog_length(j, j) = 0.0;
    for (Index k = 0; k < j; ++k) {
      const double dist = (layer.centroids.row(j) - layer.centroids.row(k)).norm();
      f.dcov_dlog_length(j, k) = f.dcov_dlog_length(k, j) = f.cov(j, k) * dist / layer.length_scale;
    }
  }
  f.cov.diagonal().array() += kWeightCovJitter * layer.sigma2;
  Eigen::LLT<MatrixXd> llt(f.cov);
  if (llt.info() != Eigen::Success)
    throw IllConditionedError("weight covariance is not positive definite after jitter");
  f.chol = llt.matrixL();
  f.logdet = 2.0 * f.chol.diagonal().array().log().sum();
  f.inverse = llt.solve(MatrixXd::Identity(r, r));
  return f;
}

}  // namespace deepwarp
