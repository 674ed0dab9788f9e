#include "deepwarp/sdsp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace deepwarp {

VectorXd prior_mean(const WarpStack& stack, const ParamBlock& block, const WeightPrior& prior) {
  const WarpLayer& layer = stack.layers().at(block.layer);
  if (std::holds_alternative<AwuLayer>(layer)) {
    VectorXd m = VectorXd::Constant(block.size, prior.awu_sigmoid_mean);
    m(0) = prior.awu_linear_mean;
    return m;
  }
  if (std::holds_alternative<RbfLayer>(layer)) return VectorXd::Constant(1, prior.rbf_mean);
  throw InvalidParameterError("Möbius coefficients have no weight prior");
}

MatrixXd VariationalBlock::chol() const {
  const Index k = size();
  MatrixXd l = MatrixXd::Zero(k, k);
  for (Index i = 0; i < k; ++i) {
    l(i, i) = std::exp(log_diag(i));
    if (full())
      for (Index j = 0; j < i; ++j) l(i, j) = lower(i * (i - 1) / 2 + j);
  }
  return l;
}

Index VariationalState::num_weights() const {
  Index n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

Index VariationalState::num_params() const {
  Index n = 0;
  for (const auto& b : blocks) n += b.num_params();
  return n;
}

VectorXd VariationalState::pack() const {
  VectorXd out(num_params());
  Index off = 0;
  for (const auto& b : blocks) {
    out.segment(off, b.size()) = b.mean;
    out.segment(off + b.size(), b.size()) = b.log_diag;
    out.segment(off + 2 * b.size(), b.lower.size()) = b.lower;
    off += b.num_params();
  }
  return out;
}

void VariationalState::unpack(const VectorXd& flat) {
  if (flat.size() != num_params()) throw InvalidParameterError("variational parameter vector has the wrong length");
  Index off = 0;
  for (auto& b : blocks) {
    b.mean = flat.segment(off, b.size());
    b.log_diag = flat.segment(off + b.size(), b.size());
    b.lower = flat.segment(off + 2 * b.size(), b.lower.size());
    off += b.num_params();
  }
}

VariationalState init_variational(const WarpStack& stack, const WeightPrior& prior, bool full_cholesky,
                                  double init_log_sd) {
  if (!(prior.variance > 0.0)) throw InvalidParameterError("prior variance must be positive");
  VariationalState q;
  q.full_cholesky = full_cholesky;
  const VectorXd p = stack.params();
  for (const auto& b : stack.blocks()) {
    if (!b.random_weights) continue;
    VariationalBlock vb;
    vb.block = b;
    vb.mean = p.segment(b.offset, b.size);
    vb.log_diag = VectorXd::Constant(b.size, init_log_sd);
    vb.lower = full_cholesky ? VectorXd::Zero(b.size * (b.size - 1) / 2) : VectorXd();
    vb.prior_mean = prior_mean(stack, b, prior);
    q.blocks.push_back(std::move(vb));
  }
  return q;
}

double kl_gaussian(const VectorXd& q_mean, const MatrixXd& q_chol, const VectorXd& p_mean, double p_var) {
  if (!(p_var > 0.0)) throw InvalidParameterError("prior variance must be positive");
  const Index k = q_mean.size();
  if (q_chol.rows() != k || q_chol.cols() != k || p_mean.size() != k)
    throw InvalidParameterError("KL arguments have inconsistent sizes");
  const double log_det_v = 2.0 * q_chol.diagonal().cwiseAbs().array().log().sum();
  return 0.5 * (q_chol.squaredNorm() / p_var + (q_mean - p_mean).squaredNorm() / p_var - static_cast<double>(k) +
                static_cast<double>(k) * std::log(p_var) - log_det_v);
}

VectorXd draw_standard_normals(const VariationalState& q, RngStream& rng) {
  return rng.normal_vector(q.num_weights());
}

VectorXd sample_weights(const VariationalState& q, const VectorXd& stack_params, const VectorXd& e) {
  if (e.size() != q.num_weights()) throw InvalidParameterError("noise vector has the wrong length");
  VectorXd out = stack_params;
  Index off = 0;
  for (const auto& b : q.blocks) {
    const Index k = b.size();
    VectorXd w = b.mean;
    for (Index i = 0; i < k; ++i) {
      const double d = std::exp(b.log_diag(i));
      if (d != 0.0) w(i) += d * e(off + i);
      if (b.full())
        for (Index j = 0; j < i; ++j) w(i) += b.lower(i * (i - 1) / 2 + j) * e(off + j);
    }
    out.segment(b.block.offset, k) = w;
    off += k;
  }
  return out;
}

VectorXd sample_weights(const VariationalState& q, const VectorXd& stack_params, RngStream& rng) {
  return sample_weights(q, stack_params, draw_standard_normals(q, rng));
}

// ---------------------------------------------------------------------------

SdspObjective::SdspObjective(Dataset data, WarpStack stack, ProcessLayer process, WeightPrior prior,
                             bool full_cholesky, double init_log_sd)
    : data_(std::move(data)), stack_(std::move(stack)), process_(std::move(process)), prior_(prior) {
  if (data_.dim() != stack_.dim()) throw InvalidParameterError("data and warp stack dimensions differ");
  if (process_.dim() != stack_.dim()) throw InvalidParameterError("top layer dimension differs from data");
  q_ = init_variational(stack_, prior_, full_cholesky, init_log_sd);
  for (const auto& b : stack_.blocks())
    if (!b.random_weights) mobius_offsets_.push_back(b.offset);
}

VectorXd SdspObjective::initial_params() const {
  VectorXd p(size());
  p.head(variational_size()) = q_.pack();
  const VectorXd sp = stack_.params();
  for (std::size_t j = 0; j < mobius_offsets_.size(); ++j)
    p.segment(variational_size() + 8 * static_cast<Index>(j), 8) = sp.segment(mobius_offsets_[j], 8);
  const Index t = variational_size() + mobius_size();
  p(t) = std::log(process_.sigma2);
  p(t + 1) = std::log(process_.length_scale);
  p(t + 2) = std::log(data_.noise_var);
  return p;
}

void SdspObjective::unpack(const VectorXd& params, VariationalState& q, WarpStack& stack, ProcessLayer& process,
                           double& noise_var) const {
  if (params.size() != size()) throw InvalidParameterError("parameter vector has the wrong length");
  q = q_;
  q.unpack(params.head(variational_size()));
  stack = stack_;
  VectorXd sp = stack.params();
  for (const auto& b : q.blocks) sp.segment(b.block.offset, b.size()) = b.mean;
  for (std::size_t j = 0; j < mobius_offsets_.size(); ++j)
    sp.segment(mobius_offsets_[j], 8) = params.segment(variational_size() + 8 * static_cast<Index>(j), 8);
  stack.set_params(sp);
  process = process_;
  const Index t = variational_size() + mobius_size();
  process.sigma2 = std::exp(params(t));
  process.length_scale = std::exp(params(t + 1));
  noise_var = std::exp(params(t + 2));
}

namespace {

std::vector<Index> range(Index begin, Index count) {
  std::vector<Index> out(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = begin + i;
  return out;
}

}  // namespace

std::vector<Index> SdspObjective::mean_indices() const {
  std::vector<Index> out;
  Index off = 0;
  for (const auto& b : q_.blocks) {
    for (Index i = 0; i < b.size(); ++i) out.push_back(off + i);
    off += b.num_params();
  }
  return out;
}

std::vector<Index> SdspObjective::chol_indices() const {
  std::vector<Index> out;
  Index off = 0;
  for (const auto& b : q_.blocks) {
    for (Index i = b.size(); i < b.num_params(); ++i) out.push_back(off + i);
    off += b.num_params();
  }
  return out;
}

std::vector<Index> SdspObjective::mobius_indices() const { return range(variational_size(), mobius_size()); }
std::vector<Index> SdspObjective::top_indices() const { return range(variational_size() + mobius_size(), 3); }

std::vector<VectorXd> SdspObjective::draw(Index n_mc, RngStream& rng) const {
  if (n_mc < 1) throw InvalidParameterError("need at least one Monte Carlo sample");
  std::vector<VectorXd> draws;
  draws.reserve(static_cast<std::size_t>(n_mc));
  for (Index l = 0; l < n_mc; ++l) draws.push_back(draw_standard_normals(q_, rng));
  return draws;
}

double SdspObjective::expected_loglik(const VectorXd& params, const std::vector<VectorXd>& draws, VectorXd* grad,
                                      int threads) const {
  if (draws.empty()) throw InvalidParameterError("need at least one Monte Carlo sample");
  VariationalState q;
  WarpStack stack;
  ProcessLayer process;
  double noise = 0.0;
  unpack(params, q, stack, process, noise);
  const WeightCovFactor prior = factor_weight_cov(process);
  const VectorXd base = stack.params();
  const bool with_grad = grad != nullptr;

  const std::size_t n = draws.size();
  std::vector<WarpedLoglik> results(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t l) {
    try {
      WarpStack s = stack;
      s.set_params(sample_weights(q, base, draws[l]));
      results[l] = warped_loglik(s, process, prior, noise, data_.locations, data_.z, with_grad);
    } catch (...) {
      errors[l] = std::current_exception();
    }
  };
  const int nt = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (nt == 1) {
    for (std::size_t l = 0; l < n; ++l) work(l);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t l = static_cast<std::size_t>(t); l < n; l += static_cast<std::size_t>(nt)) work(l);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // summed in sample order so threaded and sequential runs agree bit for bit
  double value = 0.0;
  if (with_grad) grad->setZero(size());
  const Index top = variational_size() + mobius_size();
  for (std::size_t l = 0; l < n; ++l) {
    const WarpedLoglik& r = results[l];
    value += r.value;
    if (!with_grad) continue;
    Index off = 0, eoff = 0;
    for (const auto& b : q.blocks) {
      const Index k = b.size();
      const VectorXd dw = r.dwarp.segment(b.block.offset, k);
      const VectorXd& e = draws[l];
      grad->segment(off, k) += dw;
      for (Index i = 0; i < k; ++i) {
        (*grad)(off + k + i) += dw(i) * e(eoff + i) * std::exp(b.log_diag(i));
        if (b.full())
          for (Index j = 0; j < i; ++j) (*grad)(off + 2 * k + i * (i - 1) / 2 + j) += dw(i) * e(eoff + j);
      }
      off += b.num_params();
      eoff += k;
    }
    for (std::size_t j = 0; j < mobius_offsets_.size(); ++j)
      grad->segment(variational_size() + 8 * static_cast<Index>(j), 8) += r.dwarp.segment(mobius_offsets_[j], 8);
    (*grad)(top) += r.dlog_sigma2;
    (*grad)(top + 1) += r.dlog_length;
    (*grad)(top + 2) += r.dlog_noise;
  }
  const double inv = 1.0 / static_cast<double>(n);
  if (with_grad) *grad *= inv;
  return value * inv;
}

double SdspObjective::kl(const VectorXd& params, VectorXd* grad) const {
  VariationalState q = q_;
  q.unpack(params.head(variational_size()));
  if (grad) grad->setZero(size());
  const double pv = prior_.variance;
  double total = 0.0;
  Index off = 0;
  for (const auto& b : q.blocks) {
    const Index k = b.size();
    total += kl_gaussian(b.mean, b.chol(), b.prior_mean, pv);
    if (grad) {
      grad->segment(off, k) = (b.mean - b.prior_mean) / pv;
      for (Index i = 0; i < k; ++i) (*grad)(off + k + i) = std::exp(2.0 * b.log_diag(i)) / pv - 1.0;
      grad->segment(off + 2 * k, b.lower.size()) = b.lower / pv;
    }
    off += b.num_params();
  }
  return total;
}

double SdspObjective::elbo(const VectorXd& params, const std::vector<VectorXd>& draws, VectorXd* grad,
                           int threads) const {
  if (!grad) return expected_loglik(params, draws, nullptr, threads) - kl(params);
  VectorXd gk;
  const double e1 = expected_loglik(params, draws, grad, threads);
  const double e2 = kl(params, &gk);
  *grad -= gk;
  return e1 - e2;
}

double elbo_mc(const SdspObjective& objective, const VectorXd& params, Index n_mc, RngStream& rng, VectorXd* grad) {
  return objective.elbo(params, objective.draw(n_mc, rng), grad);
}

// ---------------------------------------------------------------------------

namespace {

void keep_mobius_admissible(const SdspObjective& obj, const VectorXd& previous, VectorXd& proposed) {
  Index at = obj.variational_size();
  for (const auto& layer : obj.stack().layers()) {
    const auto* mob = std::get_if<MobiusLayer>(&layer);
    if (!mob) continue;
    MobiusLayer trial = *mob;
    for (int k = 0; k < 8; ++k) trial.a[k] = proposed(at + k);
    if (!trial.pole_outside_input()) proposed.segment(at, 8) = previous.segment(at, 8);
    at += 8;
  }
}

}  // namespace

SdspFit fit_sdsp(const Dataset& data, WarpStack stack, ProcessLayer process, const SdspOptions& options) {
  if (data.size() < 2) throw DegenerateDataError("need at least two observations");
  if (!(sample_variance(data.z) > 0.0)) throw DegenerateDataError("observations have zero variance");
  if (options.n_mc < 1) throw InvalidParameterError("need at least one Monte Carlo sample");
  if (!stack.empty() && stack.knots().rows() == 0)
    stack.set_knots(make_knots(data, options.knot_cap, options.seed).coords);
  const SdspObjective obj(data, stack, process, options.prior, options.full_cholesky, options.init_log_sd);
  VectorXd params = obj.initial_params();

  SdspFit fit;
  fit.data = data;
  fit.prior = options.prior;
  fit.seed = options.seed;
  long step = 0;

  auto run_stage = [&](int steps, const std::vector<std::pair<std::vector<Index>, double>>& groups) {
    if (steps <= 0) return;
    VectorXd lr = VectorXd::Zero(obj.size());
    for (const auto& [idx, rate] : groups)
      for (Index i : idx) lr(i) = rate;
    AdamState adam(lr);
    for (int it = 0; it < steps; ++it, ++step) {
      RngStream rng(mix_seed(options.seed, static_cast<std::uint64_t>(step)));
      const auto draws = obj.draw(options.n_mc, rng);
      VectorXd g;
      double value = 0.0;
      try {
        value = obj.elbo(params, draws, &g, options.threads);
      } catch (const DegenerateWarpError&) {
        if (step == 0) throw;
        fit.trace.push_back(fit.trace.empty() ? 0.0 : fit.trace.back());
        continue;
      }
      fit.trace.push_back(value);
      if (!g.allFinite()) continue;
      VectorXd next = adam_step(adam, -g, params);
      keep_mobius_admissible(obj, params, next);
      params = std::move(next);
    }
  };

  const Schedule& sch = options.schedule;
  const auto means = obj.mean_indices(), chol = obj.chol_indices();
  const auto mob = obj.mobius_indices(), top = obj.top_indices();
  run_stage(sch.warp_steps, {{means, options.lr_warp}});
  run_stage(sch.top_steps, {{chol, options.lr_warp}, {mob, options.lr_warp}, {top, options.lr_top}});
  run_stage(sch.joint_steps,
            {{means, options.lr_warp}, {chol, options.lr_warp}, {mob, options.lr_warp}, {top, options.lr_top}});

  obj.unpack(params, fit.q, fit.stack, fit.process, fit.noise_var);
  fit.data.noise_var = fit.noise_var;
  return fit;
}

PredictiveSummary empirical_summary(const MatrixXd& samples) {
  const Index n = samples.rows(), m = samples.cols();
  if (m < 2) throw InvalidParameterError("empirical summary needs at least two draws");
  PredictiveSummary s;
  s.mean.resize(n);
  s.sd.resize(n);
  s.lower95.resize(n);
  s.upper95.resize(n);
  std::vector<double> row(static_cast<std::size_t>(m));
  auto quantile = [&](double p) {
    const double h = (static_cast<double>(m) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, row.size() - 1);
    return row[lo] + (h - static_cast<double>(lo)) * (row[hi] - row[lo]);
  };
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) row[static_cast<std::size_t>(j)] = samples(i, j);
    const double mean = samples.row(i).mean();
    s.mean(i) = mean;
    s.sd(i) = std::sqrt((samples.row(i).array() - mean).square().sum() / static_cast<double>(m - 1));
    std::sort(row.begin(), row.end());
    s.lower95(i) = quantile(0.025);
    s.upper95(i) = quantile(0.975);
  }
  return s;
}

SdspPrediction predict_sdsp(const SdspFit& fit, const LocationSet& s_star, Index n_mc, Index per_component,
                            std::uint64_t seed, bool include_noise, bool keep_samples) {
  if (n_mc < 1 || per_component < 1) throw InvalidParameterError("need at least one component and one draw");
  if (s_star.cols() != fit.stack.dim()) throw InvalidParameterError("prediction locations have the wrong dimension");
  const WeightCovFactor prior = factor_weight_cov(fit.process);
  const VectorXd base = fit.stack.params();
  RngStream weight_rng(mix_seed(seed, 0));
  const Index n = s_star.rows();
  MatrixXd means(n, n_mc), sds(n, n_mc);
  for (Index l = 0; l < n_mc; ++l) {
    WarpStack s = fit.stack;
    s.set_params(sample_weights(fit.q, base, weight_rng));
    const LocationSet ud = warp_forward(s, fit.data.locations).warped;
    const LocationSet up = warp_forward(s, s_star).warped;
    GaussianMoments m = conditional_moments(fit.process, prior, fit.noise_var, ud, fit.data.z, up);
    if (include_noise) m.variance.array() += fit.noise_var;
    means.col(l) = m.mean;
    sds.col(l) = m.variance.cwiseMax(0.0).cwiseSqrt();
  }

  const Index total = n_mc * per_component;
  SdspPrediction out;
  if (keep_samples) out.samples.resize(n, total);
  out.summary.mean.resize(n);
  out.summary.sd.resize(n);
  out.summary.lower95.resize(n);
  out.summary.upper95.resize(n);
  RngStream draw_rng(mix_seed(seed, 1));
  MatrixXd buffer(1, total);
  for (Index i = 0; i < n; ++i) {
    for (Index l = 0; l < n_mc; ++l)
      for (Index j = 0; j < per_component; ++j)
        buffer(0, l * per_component + j) = means(i, l) + sds(i, l) * draw_rng.normal();
    const PredictiveSummary one = empirical_summary(buffer);
    out.summary.mean(i) = one.mean(0);
    out.summary.sd(i) = one.sd(0);
    out.summary.lower95(i) = one.lower95(0);
    out.summary.upper95(i) = one.upper95(0);
    if (keep_samples) out.samples.row(i) = buffer.row(0);
  }
  return out;
}

}  // namespace deepwarp
