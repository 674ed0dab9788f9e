#pragma once

#include <optional>

#include <Eigen/Sparse>

#include "deepwarp/core.hpp"

namespace deepwarp {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Relative diagonal jitter added to the weight covariance before factorising.
inline constexpr double kWeightCovJitter = 1e-8;
/// Bisquare aperture in units of centroid spacing.
inline constexpr double kApertureSpacings = 1.5;

/// Low-rank process on the warped domain: bisquare basis functions with
/// exponentially correlated weights, cov(w_j, w_k) = sigma2 exp(-|c_j - c_k| / l).
struct ProcessLayer {
  MatrixXd centroids;  // r x d
  VectorXd apertures;  // r
  double sigma2 = 1.0;
  double length_scale = 1.0;

  /// Present when centroids form a regular grid; enables neighbour lookup.
  struct Grid {
    VectorXd lower;
    VectorXd spacing;
    int per_dim = 1;
  };
  std::optional<Grid> grid;

  Index rank() const { return centroids.rows(); }
  int dim() const { return static_cast<int>(centroids.cols()); }
};

/// Regular grid of per_dim^d centroids over `domain` (endpoints included),
/// aperture 1.5 x spacing.
ProcessLayer place_centroids(const Domain& domain, int per_dim, double sigma2 = 1.0,
                             double length_scale = 1.0);

double bisquare(double distance, double aperture);

/// N x r basis matrix, stored sparse (row i holds the basis functions whose
/// support contains u_i).
SparseRowMatrix bisquare_matrix(const ProcessLayer& layer, const LocationSet& u);
MatrixXd bisquare_matrix_dense(const ProcessLayer& layer, const LocationSet& u);

/// Chain rule through the basis: given dL/dA on the sparsity pattern of
/// `basis`, returns dL/du (N x d).
MatrixXd bisquare_backward(const ProcessLayer& layer, const LocationSet& u,
                           const SparseRowMatrix& dbasis);

/// Sigma_tau without jitter.
MatrixXd weight_cov(const ProcessLayer& layer);

/// Jittered weight covariance with the quantities the likelihood needs.
struct WeightCovFactor {
  MatrixXd cov;        // Sigma + 1e-8 sigma2 I
  MatrixXd inverse;
  MatrixXd chol;       // lower Cholesky factor of cov
  double logdet = 0.0;
  MatrixXd dcov_dlog_length;  // elementwise d cov / d log l
};

WeightCovFactor factor_weight_cov(const ProcessLayer& layer);

}  // namespace deepwarp
