#pragma once

#include "deepwarp/core.hpp"

namespace deepwarp {

/// Stationary Matérn-3/2 covariance sigma2 (1 + sqrt3 h / rho) exp(-sqrt3 h / rho)
/// plus white noise.
struct MaternParams {
  double variance = 1.0;
  double range = 0.1;
  double noise = 0.01;
};

double matern32(double h, const MaternParams& p);
MatrixXd matern32_cov(const LocationSet& a, const LocationSet& b, const MaternParams& p);

/// log Gau(Z; 0, K + noise I). `grad` receives derivatives w.r.t.
/// (log variance, log range, log noise).
double gp_loglik(const MaternParams& p, const Dataset& data, VectorXd* grad = nullptr);

struct GpOptions {
  int steps = 300;
  double learning_rate = 0.05;
};

/// Starting point: variance Var(Z), range a quarter of the largest side of the
/// data's bounding box, noise 0.1 Var(Z).
MaternParams gp_initial_params(const Dataset& data);

/// Maximum likelihood over log parameters by Adam; returns the best iterate.
MaternParams gp_fit_ml(const Dataset& data, const GpOptions& options = {});

PredictiveSummary gp_predict(const MaternParams& p, const Dataset& data, const LocationSet& s_star,
                             bool include_noise = false);

}  // namespace deepwarp
