#pragma once

#include <vector>

#include "deepwarp/adam.hpp"
#include "deepwarp/toplayer.hpp"
#include "deepwarp/warp.hpp"

namespace deepwarp {

// ---------------------------------------------------------------------------
// Integrated likelihood of Z = A w + e, w ~ Gau(0, Sigma), e ~ Gau(0, s2 I)

/// Derivatives of the integrated log-likelihood.
struct MarginalGradient {
  SparseRowMatrix dbasis;  // dL/dA restricted to A's sparsity pattern
  double dlog_sigma2 = 0.0;
  double dlog_length = 0.0;
  double dlog_noise = 0.0;
};

/// Conditional distribution of the top-layer weights given Z.
struct WeightPosterior {
  VectorXd mean;
  MatrixXd cov;
};

/// Cholesky-based pieces for an arbitrary SPD covariance (no jitter).
WeightCovFactor factor_cov_matrix(const MatrixXd& sigma);

/// log Gau(Z; 0, A Sigma A' + s2 I), evaluated in O(N r^2 + r^3) through the
/// r x r precision (1/s2) A'A + Sigma^{-1}.
double marginal_loglik(const SparseRowMatrix& a, const VectorXd& z, const WeightCovFactor& prior,
                       double noise_var, MarginalGradient* grad = nullptr,
                       WeightPosterior* posterior = nullptr);
double marginal_loglik(const MatrixXd& a, const VectorXd& z, const MatrixXd& sigma, double noise_var);

// ---------------------------------------------------------------------------
// Spatial input-warped GP

/// Log-likelihood after warping `s` through `stack`, with its gradient w.r.t.
/// the stack's flat parameters and the log top-layer / noise parameters.
struct WarpedLoglik {
  double value = 0.0;
  VectorXd dwarp;
  double dlog_sigma2 = 0.0;
  double dlog_length = 0.0;
  double dlog_noise = 0.0;
};

WarpedLoglik warped_loglik(const WarpStack& stack, const ProcessLayer& process,
                           const WeightCovFactor& prior, double noise_var, const LocationSet& s,
                           const VectorXd& z, bool with_grad);

/// Integrated log-likelihood over the flat vector
/// [warp parameters..., log sigma2, log l, log noise_var].
class SiwgpObjective {
 public:
  SiwgpObjective(Dataset data, WarpStack stack, ProcessLayer process);

  Index size() const { return warp_size() + 3; }
  Index warp_size() const { return stack_.num_params(); }
  const Dataset& data() const { return data_; }
  const WarpStack& stack() const { return stack_; }
  const ProcessLayer& process() const { return process_; }

  VectorXd pack(const WarpStack& stack, const ProcessLayer& process, double noise_var) const;
  void unpack(const VectorXd& params, WarpStack& stack, ProcessLayer& process, double& noise_var) const;
  VectorXd initial_params() const;

  double loglik(const VectorXd& params, VectorXd* grad = nullptr) const;

 private:
  const WeightCovFactor& factor_for(double sigma2, double length) const;

  Dataset data_;
  WarpStack stack_;
  ProcessLayer process_;
  mutable double cached_sigma2_ = -1.0;
  mutable double cached_length_ = -1.0;
  mutable WeightCovFactor cached_factor_;
};

/// Gradient of the negative integrated log-likelihood.
VectorXd objective_gradient(const SiwgpObjective& objective, const VectorXd& params);

/// Steps of the three-stage protocol: warp only, top layer only, joint.
struct Schedule {
  int warp_steps = 100;
  int top_steps = 100;
  int joint_steps = 100;
  int total() const { return warp_steps + top_steps + joint_steps; }
};

struct SiwgpOptions {
  Schedule schedule;
  double lr_warp = 0.1;
  double lr_top = 0.05;
  Index knot_cap = kDefaultKnotCap;
  std::uint64_t seed = 0;
};

struct SiwgpFit {
  Dataset data;
  WarpStack stack;
  ProcessLayer process;
  double noise_var = 1.0;
  std::vector<double> trace;  // log-likelihood before each step, then at the last iterate
  double best_loglik = 0.0;   // value at the returned parameters
};

/// Top layer for a stack: per_dim^d centroids over the warped domain,
/// sigma2 = Var(Z), l = a quarter of the warped domain's side.
ProcessLayer default_process_layer(const Dataset& data, const WarpStack& stack, int per_dim);
double default_noise_var(const Dataset& data);

/// Maximum-likelihood fit by staged Adam ascent. `data.noise_var` is the
/// starting noise variance. Returns the best iterate seen.
SiwgpFit fit_siwgp(const Dataset& data, WarpStack stack, ProcessLayer process,
                   const SiwgpOptions& options = {});

/// Gaussian conditional moments of Y at `pred` given warped data locations.
struct GaussianMoments {
  VectorXd mean;
  VectorXd variance;
};

GaussianMoments conditional_moments(const ProcessLayer& process, const WeightCovFactor& prior,
                                    double noise_var, const LocationSet& warped_data,
                                    const VectorXd& z, const LocationSet& warped_pred);

/// Predictive summary for Y (or for Z when `include_noise`).
PredictiveSummary predict_siwgp(const SiwgpFit& fit, const LocationSet& s_star,
                                bool include_noise = false);

// ---------------------------------------------------------------------------
// Minibatch estimators of the non-integrated log-likelihood

/// sum_j log Gau(Z_j; a_j' w, s2)
double conditional_loglik(const MatrixXd& a, const VectorXd& z, const VectorXd& w, double noise_var);

/// Throws InvalidPartitionError unless `batches` are equal-sized and cover
/// 0..n-1 exactly once.
void validate_partition(const std::vector<std::vector<Index>>& batches, Index n);

/// N_b * sum_{j in batch} log Gau(Z_j; a_j' w, s2). Unbiased for the full
/// conditional log-likelihood when the batch is one of N_b equal parts.
double minibatch_loglik_estimate(const MatrixXd& a, const VectorXd& z, const VectorXd& w,
                                 double noise_var, const std::vector<Index>& batch,
                                 Index num_batches);

/// Partition 0..n-1 into `num_batches` contiguous equal batches.
std::vector<std::vector<Index>> equal_batches(Index n, Index num_batches);

}  // namespace deepwarp
