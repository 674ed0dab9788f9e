#include "deepwarp/siwgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deepwarp {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Shared core of the integrated likelihood once Sigma is factorised.
double marginal_core(const SparseRowMatrix& a, const VectorXd& z, const WeightCovFactor& prior,
                     double noise_var, MarginalGradient* grad, WeightPosterior* posterior,
                     bool want_length) {
  if (!(noise_var > 0.0)) throw InvalidParameterError("noise variance must be positive");
  if (a.rows() != z.size()) throw InvalidParameterError("basis rows do not match observations");
  const Index n = z.size();
  const Index r = a.cols();
  const MatrixXd k = MatrixXd(a.transpose() * a);
  MatrixXd q = prior.inverse + k / noise_var;
  Eigen::LLT<MatrixXd> llt(q);
  if (llt.info() != Eigen::Success) throw IllConditionedError("posterior precision is not positive definite");
  const VectorXd b = a.transpose() * z / noise_var;
  const VectorXd mu = llt.solve(b);
  const MatrixXd lq = llt.matrixL();
  const double logdet_q = 2.0 * lq.diagonal().array().log().sum();
  const double value = -0.5 * n * kLog2Pi - 0.5 * n * std::log(noise_var) - 0.5 * prior.logdet -
                       0.5 * logdet_q - 0.5 * (z.squaredNorm() / noise_var - b.dot(mu));
  if (!grad && !posterior) return value;

  const MatrixXd s = llt.solve(MatrixXd::Identity(r, r));
  if (posterior) {
    posterior->mean = mu;
    posterior->cov = s;
  }
  if (!grad) return value;

  const VectorXd res = z - a * mu;
  // dL/dA on the pattern of A: (res mu' - A S) / s2
  grad->dbasis = a;
  for (Index i = 0; i < a.outerSize(); ++i) {
    for (SparseRowMatrix::InnerIterator it(grad->dbasis, i); it; ++it) {
      double as = 0.0;
      for (SparseRowMatrix::InnerIterator jt(a, i); jt; ++jt) as += jt.value() * s(jt.col(), it.col());
      it.valueRef() = (res(i) * mu(it.col()) - as) / noise_var;
    }
  }
  const double trace_sk = (s.array() * k.array()).sum();
  grad->dlog_noise =
      0.5 * (res.squaredNorm() / noise_var - static_cast<double>(n) + trace_sk / noise_var);

  // dL/dSigma = (B B' - Sigma^{-1} + Sigma^{-1} S Sigma^{-1}) / 2 with B = Sigma^{-1} mu
  const VectorXd bw = prior.inverse * mu;
  MatrixXd g = prior.inverse * s * prior.inverse;
  g -= prior.inverse;
  g.noalias() += bw * bw.transpose();
  g *= 0.5;
  grad->dlog_sigma2 = (g.array() * prior.cov.array()).sum();
  grad->dlog_length = want_length ? (g.array() * prior.dcov_dlog_length.array()).sum() : 0.0;
  return value;
}

}  // namespace

WeightCovFactor factor_cov_matrix(const MatrixXd& sigma) {
  WeightCovFactor f;
  f.cov = sigma;
  Eigen::LLT<MatrixXd> llt(f.cov);
  if (llt.info() != Eigen::Success) throw IllConditionedError("covariance is not positive definite");
  f.chol = llt.matrixL();
  f.logdet = 2.0 * f.chol.diagonal().array().log().sum();
  f.inverse = llt.solve(MatrixXd::Identity(sigma.rows(), sigma.cols()));
  f.dcov_dlog_length = MatrixXd::Zero(sigma.rows(), sigma.cols());
  return f;
}

double marginal_loglik(const SparseRowMatrix& a, const VectorXd& z, const WeightCovFactor& prior,
                       double noise_var, MarginalGradient* grad, WeightPosterior* posterior) {
  return marginal_core(a, z, prior, noise_var, grad, posterior, prior.dcov_dlog_length.size() > 0);
}

double marginal_loglik(const MatrixXd& a, const VectorXd& z, const MatrixXd& sigma, double noise_var) {
  return marginal_core(a.sparseView(), z, factor_cov_matrix(sigma), noise_var, nullptr, nullptr, false);
}

WarpedLoglik warped_loglik(const WarpStack& stack, const ProcessLayer& process,
                           const WeightCovFactor& prior, double noise_var, const LocationSet& s,
                           const VectorXd& z, bool with_grad) {
  WarpedLoglik out;
  const WarpTape tape = warp_record(stack, s);
  const LocationSet u = tape.warped();
  const SparseRowMatrix a = bisquare_matrix(process, u);
  if (!with_grad) {
    out.value = marginal_loglik(a, z, prior, noise_var);
    return out;
  }
  MarginalGradient g;
  out.value = marginal_loglik(a, z, prior, noise_var, &g);
  out.dlog_sigma2 = g.dlog_sigma2;
  out.dlog_length = g.dlog_length;
  out.dlog_noise = g.dlog_noise;
  const MatrixXd du = bisquare_backward(process, u, g.dbasis);
  out.dwarp = warp_backprop(stack, tape, du);
  return out;
}

// ---------------------------------------------------------------------------

SiwgpObjective::SiwgpObjective(Dataset data, WarpStack stack, ProcessLayer process)
    : data_(std::move(data)), stack_(std::move(stack)), process_(std::move(process)) {
  if (data_.dim() != stack_.dim()) throw InvalidParameterError("data and warp stack dimensions differ");
  if (process_.dim() != stack_.dim()) throw InvalidParameterError("top layer dimension differs from data");
}

VectorXd SiwgpObjective::pack(const WarpStack& stack, const ProcessLayer& process, double noise_var) const {
  VectorXd p(size());
  p.head(warp_size()) = stack.params();
  p(warp_size()) = std::log(process.sigma2);
  p(warp_size() + 1) = std::log(process.length_scale);
  p(warp_size() + 2) = std::log(noise_var);
  return p;
}

void SiwgpObjective::unpack(const VectorXd& params, WarpStack& stack, ProcessLayer& process,
                            double& noise_var) const {
  if (params.size() != size()) throw InvalidParameterError("parameter vector has the wrong length");
  stack = stack_;
  stack.set_params(params.head(warp_size()));
  process = process_;
  process.sigma2 = std::exp(params(warp_size()));
  process.length_scale = std::exp(params(warp_size() + 1));
  noise_var = std::exp(params(warp_size() + 2));
}

VectorXd SiwgpObjective::initial_params() const { return pack(stack_, process_, data_.noise_var); }

const WeightCovFactor& SiwgpObjective::factor_for(double sigma2, double length) const {
  if (sigma2 != cached_sigma2_ || length != cached_length_) {
    ProcessLayer p = process_;
    p.sigma2 = sigma2;
    p.length_scale = length;
    cached_factor_ = factor_weight_cov(p);
    cached_sigma2_ = sigma2;
    cached_length_ = length;
  }
  return cached_factor_;
}

double SiwgpObjective::loglik(const VectorXd& params, VectorXd* grad) const {
  WarpStack stack;
  ProcessLayer process;
  double noise = 0.0;
  unpack(params, stack, process, noise);
  const WeightCovFactor& prior = factor_for(process.sigma2, process.length_scale);
  const WarpedLoglik w = warped_loglik(stack, process, prior, noise, data_.locations, data_.z, grad != nullptr);
  if (grad) {
    grad->resize(size());
    grad->head(warp_size()) = w.dwarp;
    (*grad)(warp_size()) = w.dlog_sigma2;
    (*grad)(warp_size() + 1) = w.dlog_length;
    (*grad)(warp_size() + 2) = w.dlog_noise;
  }
  return w.value;
}

VectorXd objective_gradient(const SiwgpObjective& objective, const VectorXd& params) {
  VectorXd g;
  objective.loglik(params, &g);
  return -g;
}

// ---------------------------------------------------------------------------

ProcessLayer default_process_layer(const Dataset& data, const WarpStack& stack, int per_dim) {
  Domain dom = stack.empty() ? stack.domain() : Domain::unit(data.dim());
  if (dom.dim() == 0) dom = Domain::bounding_box(data.locations);
  const double var = sample_variance(data.z);
  if (!(var > 0.0)) throw DegenerateDataError("observations have zero variance");
  double side = dom.side(0);
  for (int k = 1; k < dom.dim(); ++k) side = std::max(side, dom.side(k));
  return place_centroids(dom, per_dim, var, 0.25 * side);
}

double default_noise_var(const Dataset& data) {
  const double var = sample_variance(data.z);
  if (!(var > 0.0)) throw DegenerateDataError("observations have zero variance");
  return 0.1 * var;
}

namespace {

// Restores Möbius blocks whose update moved the pole into the input square.
void keep_admissible(const WarpStack& stack, const VectorXd& previous, VectorXd& proposed) {
  const auto blocks = stack.blocks();
  for (const auto& b : blocks) {
    if (b.random_weights) continue;
    const auto& layer = std::get<MobiusLayer>(stack.layers()[b.layer]);
    MobiusLayer trial = layer;
    for (int k = 0; k < 8; ++k) trial.a[k] = proposed(b.offset + k);
    if (!trial.pole_outside_input()) proposed.segment(b.offset, b.size) = previous.segment(b.offset, b.size);
  }
}

}  // namespace

SiwgpFit fit_siwgp(const Dataset& data, WarpStack stack, ProcessLayer process, const SiwgpOptions& options) {
  if (data.size() < 2) throw DegenerateDataError("need at least two observations");
  if (!(sample_variance(data.z) > 0.0)) throw DegenerateDataError("observations have zero variance");
  if (!stack.empty() && stack.knots().rows() == 0)
    stack.set_knots(make_knots(data, options.knot_cap, options.seed).coords);
  const SiwgpObjective objective(data, stack, process);
  const Index nw = objective.warp_size();
  VectorXd params = objective.initial_params();

  SiwgpFit fit;
  fit.data = data;
  double best = -std::numeric_limits<double>::infinity();
  VectorXd best_params = params;

  auto run_stage = [&](int steps, double lr_warp, double lr_top) {
    if (steps <= 0) return;
    VectorXd lr(objective.size());
    lr.head(nw).setConstant(lr_warp);
    lr.tail(3).setConstant(lr_top);
    AdamState adam(lr);
    VectorXd previous = params;
    for (int it = 0; it < steps; ++it) {
      VectorXd g;
      double ll = 0.0;
      try {
        ll = objective.loglik(params, &g);
      } catch (const Error&) {
        if (!std::isfinite(best)) throw;
        params = previous;
        break;
      }
      fit.trace.push_back(ll);
      if (std::isfinite(ll) && ll > best) {
        best = ll;
        best_params = params;
      }
      if (!g.allFinite()) break;
      VectorXd next = adam_step(adam, -g, params);
      keep_admissible(stack, params, next);
      previous = params;
      params = std::move(next);
    }
  };

  const Schedule& sch = options.schedule;
  run_stage(sch.warp_steps, options.lr_warp, 0.0);
  run_stage(sch.top_steps, 0.0, options.lr_top);
  run_stage(sch.joint_steps, options.lr_warp, options.lr_top);

  double final_ll = -std::numeric_limits<double>::infinity();
  try {
    final_ll = objective.loglik(params);
  } catch (const Error&) {
  }
  fit.trace.push_back(final_ll);
  if (std::isfinite(final_ll) && final_ll > best) {
    best = final_ll;
    best_params = params;
  }
  if (!std::isfinite(best)) throw IllConditionedError("log-likelihood is not finite at any iterate");
  objective.unpack(best_params, fit.stack, fit.process, fit.noise_var);
  fit.data.noise_var = fit.noise_var;
  fit.best_loglik = best;
  return fit;
}

GaussianMoments conditional_moments(const ProcessLayer& process, const WeightCovFactor& prior,
                                    double noise_var, const LocationSet& warped_data,
                                    const VectorXd& z, const LocationSet& warped_pred) {
  const SparseRowMatrix a = bisquare_matrix(process, warped_data);
  WeightPosterior post;
  marginal_loglik(a, z, prior, noise_var, nullptr, &post);
  const SparseRowMatrix ap = bisquare_matrix(process, warped_pred);
  GaussianMoments m;
  m.mean = ap * post.mean;
  m.variance.resize(ap.rows());
  for (Index i = 0; i < ap.outerSize(); ++i) {
    double v = 0.0;
    for (SparseRowMatrix::InnerIterator it(ap, i); it; ++it)
      for (SparseRowMatrix::InnerIterator jt(ap, i); jt; ++jt)
        v += it.value() * post.cov(it.col(), jt.col()) * jt.value();
    m.variance(i) = std::max(v, 0.0);
  }
  return m;
}

PredictiveSummary predict_siwgp(const SiwgpFit& fit, const LocationSet& s_star, bool include_noise) {
  if (s_star.cols() != fit.stack.dim()) throw InvalidParameterError("prediction locations have the wrong dimension");
  const WeightCovFactor prior = factor_weight_cov(fit.process);
  const LocationSet ud = warp_forward(fit.stack, fit.data.locations).warped;
  const LocationSet up = warp_forward(fit.stack, s_star).warped;
  GaussianMoments m = conditional_moments(fit.process, prior, fit.noise_var, ud, fit.data.z, up);
  if (include_noise) m.variance.array() += fit.noise_var;
  return gaussian_summary(m.mean, m.variance);
}

// ---------------------------------------------------------------------------

double conditional_loglik(const MatrixXd& a, const VectorXd& z, const VectorXd& w, double noise_var) {
  if (!(noise_var > 0.0)) throw InvalidParameterError("noise variance must be positive");
  const VectorXd res = z - a * w;
  return -0.5 * z.size() * (kLog2Pi + std::log(noise_var)) - 0.5 * res.squaredNorm() / noise_var;
}

void validate_partition(const std::vector<std::vector<Index>>& batches, Index n) {
  if (batches.empty()) throw InvalidPartitionError("no batches");
  const std::size_t size = batches.front().size();
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (const auto& b : batches) {
    if (b.size() != size || size == 0) throw InvalidPartitionError("batches must be non-empty and of equal size");
    for (Index j : b) {
      if (j < 0 || j >= n) throw InvalidPartitionError("batch index out of range");
      if (seen[static_cast<std::size_t>(j)]++) throw InvalidPartitionError("observation appears in two batches");
    }
  }
  if (size * batches.size() != static_cast<std::size_t>(n))
    throw InvalidPartitionError("batches do not cover every observation");
}

double minibatch_loglik_estimate(const MatrixXd& a, const VectorXd& z, const VectorXd& w,
                                 double noise_var, const std::vector<Index>& batch, Index num_batches) {
  if (!(noise_var > 0.0)) throw InvalidParameterError("noise variance must be positive");
  if (num_batches < 1 || batch.empty()) throw InvalidPartitionError("empty batch");
  if (static_cast<Index>(batch.size()) * num_batches != z.size())
    throw InvalidPartitionError("batch size times batch count must equal the number of observations");
  double sum = 0.0;
  for (Index j : batch) {
    if (j < 0 || j >= z.size()) throw InvalidPartitionError("batch index out of range");
    const double res = z(j) - a.row(j).dot(w);
    sum += -0.5 * (kLog2Pi + std::log(noise_var)) - 0.5 * res * res / noise_var;
  }
  return static_cast<double>(num_batches) * sum;
}

std::vector<std::vector<Index>> equal_batches(Index n, Index num_batches) {
  if (num_batches < 1 || n % num_batches != 0)
    throw InvalidPartitionError("observation count is not divisible by the batch count");
  const Index size = n / num_batches;
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(num_batches));
  for (Index b = 0; b < num_batches; ++b)
    for (Index j = 0; j < size; ++j) out[static_cast<std::size_t>(b)].push_back(b * size + j);
  return out;
}

}  // namespace deepwarp
