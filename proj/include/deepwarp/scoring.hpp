#pragma once

#include "deepwarp/core.hpp"

namespace deepwarp {

struct ScoreReport {
  double mape = 0.0;
  double rmspe = 0.0;
  double crps = 0.0;
  double is95 = 0.0;
};

double mape(const VectorXd& truth, const VectorXd& mean);
double rmspe(const VectorXd& truth, const VectorXd& mean);

/// Closed-form CRPS of Gau(mean, sd^2), averaged over locations. sd = 0 gives
/// the absolute error.
double crps_gaussian(const VectorXd& mean, const VectorXd& sd, const VectorXd& truth);

/// Sample-based CRPS; `samples` holds one row of draws per location.
double crps_samples(const MatrixXd& samples, const VectorXd& truth);

/// Interval score of a central 95% interval, averaged over locations.
double interval_score95(const VectorXd& lower, const VectorXd& upper, const VectorXd& truth);

/// TP / (TP + FP + FN) where positive means strictly below the threshold;
/// 0 when no location is positive in either field.
double threat_score(const VectorXd& pred, const VectorXd& truth, double pred_threshold,
                    double truth_threshold);

/// MAPE, RMSPE, Gaussian CRPS and IS for a predictive summary.
ScoreReport score(const PredictiveSummary& pred, const VectorXd& truth);

}  // namespace deepwarp
