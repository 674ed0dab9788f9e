#pragma once

#include <vector>

#include "deepwarp/siwgp.hpp"

namespace deepwarp {

/// Independent Gaussian priors on transformed warp weights.
struct WeightPrior {
  double awu_linear_mean = 0.0;
  double awu_sigmoid_mean = -4.0;
  double rbf_mean = -0.8;
  double variance = 10.0;
};

/// Prior mean of every coordinate in a random block of `stack`.
VectorXd prior_mean(const WarpStack& stack, const ParamBlock& block, const WeightPrior& prior);

/// Gaussian variational factor over one layer's transformed weights,
/// q = Gau(mean, L L') with L lower triangular and positive diagonal.
struct VariationalBlock {
  ParamBlock block;
  VectorXd mean;
  VectorXd log_diag;   // log L_ii; -inf gives L_ii = 0
  VectorXd lower;      // strict lower triangle, row-major; empty in diagonal mode
  VectorXd prior_mean;

  Index size() const { return mean.size(); }
  bool full() const { return lower.size() > 0; }
  MatrixXd chol() const;
  /// Number of free variational parameters in this block.
  Index num_params() const { return 2 * size() + lower.size(); }
};

struct VariationalState {
  std::vector<VariationalBlock> blocks;
  bool full_cholesky = false;

  Index num_weights() const;
  Index num_params() const;
  VectorXd pack() const;
  void unpack(const VectorXd& flat);
};

/// Means start at the stack's current transformed weights, standard
/// deviations at exp(init_log_sd), off-diagonals at zero.
VariationalState init_variational(const WarpStack& stack, const WeightPrior& prior, bool full_cholesky,
                                  double init_log_sd = -3.0);

/// KL(Gau(q_mean, LL') || Gau(p_mean, p_var I)).
double kl_gaussian(const VectorXd& q_mean, const MatrixXd& q_chol, const VectorXd& p_mean, double p_var);

/// One standard-normal vector per random weight, concatenated over blocks.
VectorXd draw_standard_normals(const VariationalState& q, RngStream& rng);

/// Stack parameters with every random block replaced by m + L e.
VectorXd sample_weights(const VariationalState& q, const VectorXd& stack_params, const VectorXd& e);
VectorXd sample_weights(const VariationalState& q, const VectorXd& stack_params, RngStream& rng);

/// Evidence lower bound over the flat vector
/// [variational params..., Möbius coefficients..., log sigma2, log l, log noise_var].
class SdspObjective {
 public:
  SdspObjective(Dataset data, WarpStack stack, ProcessLayer process, WeightPrior prior, bool full_cholesky,
                double init_log_sd = -3.0);

  Index size() const { return variational_size() + mobius_size() + 3; }
  Index variational_size() const { return q_.num_params(); }
  Index mobius_size() const { return static_cast<Index>(mobius_offsets_.size()) * 8; }
  Index num_weights() const { return q_.num_weights(); }
  const Dataset& data() const { return data_; }
  const WarpStack& stack() const { return stack_; }
  const ProcessLayer& process() const { return process_; }
  const WeightPrior& prior() const { return prior_; }

  VectorXd initial_params() const;
  void unpack(const VectorXd& params, VariationalState& q, WarpStack& stack, ProcessLayer& process,
              double& noise_var) const;

  /// Index ranges used by the staged optimiser.
  std::vector<Index> mean_indices() const;
  std::vector<Index> chol_indices() const;
  std::vector<Index> mobius_indices() const;
  std::vector<Index> top_indices() const;

  /// (1/L) sum_l loglik at the weights m + L e_l, with gradient.
  double expected_loglik(const VectorXd& params, const std::vector<VectorXd>& draws, VectorXd* grad = nullptr,
                         int threads = 1) const;
  double kl(const VectorXd& params, VectorXd* grad = nullptr) const;
  /// expected_loglik - kl.
  double elbo(const VectorXd& params, const std::vector<VectorXd>& draws, VectorXd* grad = nullptr,
              int threads = 1) const;

  std::vector<VectorXd> draw(Index n_mc, RngStream& rng) const;

 private:
  Dataset data_;
  WarpStack stack_;
  ProcessLayer process_;
  WeightPrior prior_;
  VariationalState q_;
  std::vector<Index> mobius_offsets_;  // offsets into the stack's flat parameters
};

/// ELBO with N_MC fresh draws from `rng`.
double elbo_mc(const SdspObjective& objective, const VectorXd& params, Index n_mc, RngStream& rng,
               VectorXd* grad = nullptr);

struct SdspOptions {
  Schedule schedule;
  Index n_mc = 10;
  double lr_warp = 0.01;
  double lr_top = 0.05;
  bool full_cholesky = false;
  double init_log_sd = -3.0;
  WeightPrior prior;
  Index knot_cap = kDefaultKnotCap;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SdspFit {
  Dataset data;
  WarpStack stack;  // Möbius estimates; random weights set to the variational means
  ProcessLayer process;
  double noise_var = 1.0;
  VariationalState q;
  WeightPrior prior;
  std::vector<double> trace;  // ELBO estimate at each step
  std::uint64_t seed = 0;
};

SdspFit fit_sdsp(const Dataset& data, WarpStack stack, ProcessLayer process, const SdspOptions& options = {});

struct SdspPrediction {
  PredictiveSummary summary;
  MatrixXd samples;  // locations x (n_mc * per_component) when kept
};

/// Pooled draws from the Gaussian mixture over n_mc weight samples,
/// `per_component` draws per component and location.
SdspPrediction predict_sdsp(const SdspFit& fit, const LocationSet& s_star, Index n_mc = 10,
                            Index per_component = 100, std::uint64_t seed = 0, bool include_noise = false,
                            bool keep_samples = false);

/// Empirical mean, sd and 2.5/97.5 percentiles per row of `samples`.
PredictiveSummary empirical_summary(const MatrixXd& samples);

}  // namespace deepwarp
