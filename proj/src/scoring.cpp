#include "deepwarp/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace deepwarp {

namespace {

void check_lengths(Index a, Index b) {
  if (a != b) throw InvalidParameterError("score inputs have different lengths");
  if (a == 0) throw InvalidParameterError("score inputs are empty");
}

double normal_pdf(double x) { return 0.3989422804014327 * std::exp(-0.5 * x * x); }
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

double mape(const VectorXd& truth, const VectorXd& mean) {
  check_lengths(truth.size(), mean.size());
  return (truth - mean).cwiseAbs().mean();
}

double rmspe(const VectorXd& truth, const VectorXd& mean) {
  check_lengths(truth.size(), mean.size());
  return std::sqrt((truth - mean).squaredNorm() / static_cast<double>(truth.size()));
}

double crps_gaussian(const VectorXd& mean, const VectorXd& sd, const VectorXd& truth) {
  check_lengths(truth.size(), mean.size());
  check_lengths(truth.size(), sd.size());
  const double inv_sqrt_pi = 0.5641895835477563;
  double total = 0.0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (sd(i) < 0.0) throw InvalidParameterError("negative predictive standard deviation");
    if (sd(i) == 0.0) {
      total += std::abs(truth(i) - mean(i));
      continue;
    }
    const double z = (truth(i) - mean(i)) / sd(i);
    total += sd(i) * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - inv_sqrt_pi);
  }
  return total / static_cast<double>(truth.size());
}

double crps_samples(const MatrixXd& samples, const VectorXd& truth) {
  check_lengths(truth.size(), samples.rows());
  const Index m = samples.cols();
  if (m < 2) throw InvalidParameterError("sample CRPS needs at least two draws per location");
  std::vector<double> x(static_cast<std::size_t>(m));
  double total = 0.0;
  for (Index i = 0; i < truth.size(); ++i) {
    double abs_err = 0.0;
    for (Index j = 0; j < m; ++j) {
      x[static_cast<std::size_t>(j)] = samples(i, j);
      abs_err += std::abs(samples(i, j) - truth(i));
    }
    // sum_{j,k} |x_j - x_k| = 2 sum_k (2k - m + 1) x_(k) over sorted draws
    std::sort(x.begin(), x.end());
    double pair = 0.0;
    for (Index k = 0; k < m; ++k) pair += (2.0 * k - m + 1.0) * x[static_cast<std::size_t>(k)];
    pair *= 2.0;
    const double md = static_cast<double>(m);
    total += abs_err / md - pair / (2.0 * md * md);
  }
  return total / static_cast<double>(truth.size());
}

double interval_score95(const VectorXd& lower, const VectorXd& upper, const VectorXd& truth) {
  check_lengths(truth.size(), lower.size());
  check_lengths(truth.size(), upper.size());
  const double k = 2.0 / 0.05;
  double total = 0.0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (lower(i) > upper(i)) throw InvalidParameterError("interval lower bound exceeds upper bound");
    double s = upper(i) - lower(i);
    if (truth(i) < lower(i)) s += k * (lower(i) - truth(i));
    if (truth(i) > upper(i)) s += k * (truth(i) - upper(i));
    total += s;
  }
  return total / static_cast<double>(truth.size());
}

double threat_score(const VectorXd& pred, const VectorXd& truth, double pred_threshold,
                    double truth_threshold) {
  if (pred.size() != truth.size()) throw InvalidParameterError("threat score fields have different lengths");
  Index tp = 0, fp = 0, fn = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool p = pred(i) < pred_threshold;
    const bool t = truth(i) < truth_threshold;
    if (p && t) ++tp;
    else if (p) ++fp;
    else if (t) ++fn;
  }
  const Index denom = tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

ScoreReport score(const PredictiveSummary& pred, const VectorXd& truth) {
  ScoreReport r;
  r.mape = mape(truth, pred.mean);
  r.rmspe = rmspe(truth, pred.mean);
  r.crps = crps_gaussian(pred.mean, pred.sd, truth);
  r.is95 = interval_score95(pred.lower95, pred.upper95, truth);
  return r;
}

}  // namespace deepwarp
