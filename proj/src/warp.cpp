#include "deepwarp/warp.hpp"

#include <algorithm>
#include <limits>

namespace deepwarp {

namespace {

constexpr double kRbfPrefactor = 1.0;  // the 1 in (1 + e^{3/2}/2)

double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

double rbf_weight(double tweight) {
  return (kRbfPrefactor + kRbfWeightUpper) * logistic(tweight) - 1.0;
}

double rbf_weight_derivative(double tweight) {
  const double p = logistic(tweight);
  return (kRbfPrefactor + kRbfWeightUpper) * p * (1.0 - p);
}

double rbf_tweight(double weight) {
  if (!(weight > -1.0 && weight < kRbfWeightUpper))
    throw InvalidParameterError("RBF weight outside (-1, e^{3/2}/2)");
  const double p = (1.0 + weight) / (kRbfPrefactor + kRbfWeightUpper);
  return std::log(p / (1.0 - p));
}

AwuLayer::AwuLayer(int ax, Index basis_count, double steep, double lo, double hi)
    : axis(ax), steepness(steep) {
  if (basis_count < 1) throw InvalidParameterError("AWU needs at least the linear basis function");
  if (!(steepness > 0.0)) throw InvalidParameterError("AWU steepness must be positive");
  if (!(lo < hi)) throw InvalidParameterError("AWU input interval is empty");
  const Index n_sig = basis_count - 1;
  centers.resize(n_sig);
  for (Index j = 0; j < n_sig; ++j)
    centers(j) = n_sig == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n_sig - 1);
  tweights = VectorXd::Constant(basis_count, std::log(0.01));
  tweights(0) = 0.0;
}

VectorXd AwuLayer::basis(double s) const {
  VectorXd phi(basis_count());
  phi(0) = s;
  for (Index j = 0; j < centers.size(); ++j) phi(j + 1) = sigmoid(s, steepness, centers(j));
  return phi;
}

bool MobiusLayer::pole_outside_input() const {
  const std::complex<double> a3 = coef(2);
  if (a3 == std::complex<double>(0.0, 0.0)) return true;
  const std::complex<double> pole = -coef(3) / a3;
  Eigen::Vector2d p(pole.real(), pole.imag());
  return !input.contains(p);
}

// ---------------------------------------------------------------------------
// Single-layer forward and reverse passes on stacked rows.

namespace {

Index layer_param_count(const WarpLayer& layer) {
  return std::visit(
      [](const auto& l) -> Index {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AwuLayer>) return l.tweights.size();
        else if constexpr (std::is_same_v<T, RbfLayer>) return 1;
        else return 8;
      },
      layer);
}

void check_dims(const WarpLayer& layer, Index dim) {
  std::visit(
      [dim](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AwuLayer>) {
          if (l.axis < 0 || l.axis >= dim) throw InvalidParameterError("AWU axis out of range");
        } else {
          if (dim != 2) throw InvalidParameterError("RBF and Möbius units require 2D inputs");
        }
      },
      layer);
}

MatrixXd forward_awu(const AwuLayer& l, const MatrixXd& x) {
  MatrixXd y = x;
  const VectorXd w = l.weights();
  for (Index i = 0; i < x.rows(); ++i) {
    const double s = x(i, l.axis);
    double out = w(0) * s;
    for (Index j = 0; j < l.centers.size(); ++j) out += w(j + 1) * sigmoid(s, l.steepness, l.centers(j));
    y(i, l.axis) = out;
  }
  return y;
}

void backward_awu(const AwuLayer& l, const MatrixXd& x, const MatrixXd& dy, MatrixXd& dx,
                  Eigen::Ref<VectorXd> dp) {
  dx = dy;
  const VectorXd w = l.weights();
  for (Index i = 0; i < x.rows(); ++i) {
    const double g = dy(i, l.axis);
    if (g == 0.0) {
      dx(i, l.axis) = 0.0;
      continue;
    }
    const double s = x(i, l.axis);
    double slope = w(0);
    dp(0) += g * s * w(0);
    for (Index j = 0; j < l.centers.size(); ++j) {
      const double sg = sigmoid(s, l.steepness, l.centers(j));
      slope += w(j + 1) * l.steepness * sg * (1.0 - sg);
      dp(j + 1) += g * sg * w(j + 1);
    }
    dx(i, l.axis) = g * slope;
  }
}

MatrixXd forward_rbf(const RbfLayer& l, const MatrixXd& x) {
  MatrixXd y = x;
  const double w = l.weight();
  for (Index i = 0; i < x.rows(); ++i) {
    const double d0 = x(i, 0) - l.centroid(0);
    const double d1 = x(i, 1) - l.centroid(1);
    const double e = std::exp(-l.scale * (d0 * d0 + d1 * d1));
    y(i, 0) += w * d0 * e;
    y(i, 1) += w * d1 * e;
  }
  return y;
}

void backward_rbf(const RbfLayer& l, const MatrixXd& x, const MatrixXd& dy, MatrixXd& dx,
                  Eigen::Ref<VectorXd> dp) {
  dx.resize(x.rows(), 2);
  const double w = l.weight();
  double dw = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double d0 = x(i, 0) - l.centroid(0);
    const double d1 = x(i, 1) - l.centroid(1);
    const double e = std::exp(-l.scale * (d0 * d0 + d1 * d1));
    const double g0 = dy(i, 0), g1 = dy(i, 1);
    const double dg = d0 * g0 + d1 * g1;
    dx(i, 0) = g0 + w * e * (g0 - 2.0 * l.scale * d0 * dg);
    dx(i, 1) = g1 + w * e * (g1 - 2.0 * l.scale * d1 * dg);
    dw += e * dg;
  }
  dp(0) += dw * rbf_weight_derivative(l.tweight);
}

MatrixXd forward_mobius(const MobiusLayer& l, const MatrixXd& x) {
  if (!l.pole_outside_input())
    throw InvalidParameterError("Möbius pole lies inside the layer's input square");
  const auto a1 = l.coef(0), a2 = l.coef(1), a3 = l.coef(2), a4 = l.coef(3);
  MatrixXd y(x.rows(), 2);
  for (Index i = 0; i < x.rows(); ++i) {
    const std::complex<double> z(x(i, 0), x(i, 1));
    const std::complex<double> f = (a1 * z + a2) / (a3 * z + a4);
    if (!std::isfinite(f.real()) || !std::isfinite(f.imag()))
      throw InvalidParameterError("Möbius unit maps a location to infinity");
    y(i, 0) = f.real();
    y(i, 1) = f.imag();
  }
  return y;
}

void backward_mobius(const MobiusLayer& l, const MatrixXd& x, const MatrixXd& dy, MatrixXd& dx,
                     Eigen::Ref<VectorXd> dp) {
  const auto a1 = l.coef(0), a2 = l.coef(1), a3 = l.coef(2), a4 = l.coef(3);
  const std::complex<double> det = a1 * a4 - a2 * a3;
  dx.resize(x.rows(), 2);
  std::array<std::complex<double>, 4> acc{};
  for (Index i = 0; i < x.rows(); ++i) {
    const std::complex<double> z(x(i, 0), x(i, 1));
    const std::complex<double> g(dy(i, 0), dy(i, 1));
    const std::complex<double> den = a3 * z + a4;
    const std::complex<double> f = (a1 * z + a2) / den;
    const std::complex<double> fprime = det / (den * den);
    // For real L(Re f, Im f) with f holomorphic in v: dL/dRe v + i dL/dIm v = conj(df/dv) g.
    const std::complex<double> din = std::conj(fprime) * g;
    dx(i, 0) = din.real();
    dx(i, 1) = din.imag();
    acc[0] += std::conj(z / den) * g;
    acc[1] += std::conj(1.0 / den) * g;
    acc[2] += std::conj(-z * f / den) * g;
    acc[3] += std::conj(-f / den) * g;
  }
  for (int k = 0; k < 4; ++k) {
    dp(2 * k) += acc[k].real();
    dp(2 * k + 1) += acc[k].imag();
  }
}

MatrixXd layer_forward(const WarpLayer& layer, const MatrixXd& x) {
  return std::visit(
      [&x](const auto& l) -> MatrixXd {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AwuLayer>) return forward_awu(l, x);
        else if constexpr (std::is_same_v<T, RbfLayer>) return forward_rbf(l, x);
        else return forward_mobius(l, x);
      },
      layer);
}

void layer_backward(const WarpLayer& layer, const MatrixXd& x, const MatrixXd& dy, MatrixXd& dx,
                    Eigen::Ref<VectorXd> dp) {
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, AwuLayer>) backward_awu(l, x, dy, dx, dp);
        else if constexpr (std::is_same_v<T, RbfLayer>) backward_rbf(l, x, dy, dx, dp);
        else backward_mobius(l, x, dy, dx, dp);
      },
      layer);
}

}  // namespace

LocationSet awu_forward(const AwuLayer& layer, const LocationSet& s) {
  check_dims(layer, s.cols());
  return forward_awu(layer, s);
}

LocationSet rbf_forward(const RbfLayer& layer, const LocationSet& s) {
  check_dims(layer, s.cols());
  return forward_rbf(layer, s);
}

LocationSet mobius_forward(const MobiusLayer& layer, const LocationSet& s) {
  check_dims(layer, s.cols());
  return forward_mobius(layer, s);
}

// ---------------------------------------------------------------------------
// Rescaling

ScalingRecord make_scaling_record(const MatrixXd& knots, int layer_index) {
  if (knots.rows() < 2) throw DegenerateDataError("rescaling needs at least two knots");
  const Index d = knots.cols();
  ScalingRecord rec;
  rec.min.resize(d);
  rec.max.resize(d);
  rec.argmin.assign(d, 0);
  rec.argmax.assign(d, 0);
  for (Index k = 0; k < d; ++k) {
    Index imin = 0, imax = 0;
    for (Index i = 1; i < knots.rows(); ++i) {
      if (knots(i, k) < knots(imin, k)) imin = i;
      if (knots(i, k) > knots(imax, k)) imax = i;
    }
    rec.min(k) = knots(imin, k);
    rec.max(k) = knots(imax, k);
    rec.argmin[k] = imin;
    rec.argmax[k] = imax;
    if (!(rec.max(k) - rec.min(k) > kDegeneracyFloor)) {
      throw DegenerateWarpError(layer_index, "warped knots collapse along dimension " +
                                                 std::to_string(k) + " in layer " +
                                                 std::to_string(layer_index));
    }
  }
  return rec;
}

LocationSet rescale(const LocationSet& unscaled, const ScalingRecord& rec) {
  LocationSet out(unscaled.rows(), unscaled.cols());
  for (Index k = 0; k < unscaled.cols(); ++k) {
    const double range = rec.max(k) - rec.min(k);
    if (!(range > kDegeneracyFloor)) throw DegenerateWarpError(-1, "degenerate scaling record");
    for (Index i = 0; i < unscaled.rows(); ++i) {
      out(i, k) = (unscaled(i, k) - rec.min(k)) / range + rec.offset;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stack

Domain WarpStack::layer_input_domain(std::size_t i) const {
  return i == 0 ? domain_ : Domain::unit(domain_.dim());
}

WarpStack& WarpStack::add(WarpLayer layer) {
  if (domain_.dim() == 0) throw InvalidParameterError("stack has no geographic domain");
  check_dims(layer, domain_.dim());
  layers_.push_back(std::move(layer));
  return *this;
}

WarpStack& WarpStack::add_awu(int axis, Index basis_count, double steepness) {
  const Domain in = layer_input_domain(layers_.size());
  if (axis < 0 || axis >= in.dim()) throw InvalidParameterError("AWU axis out of range");
  return add(AwuLayer(axis, basis_count, steepness, in.lower(axis), in.upper(axis)));
}

WarpStack& WarpStack::add_sr_rbf(int resolution) {
  for (auto& l : build_sr_rbf(resolution, layer_input_domain(layers_.size()))) add(l);
  return *this;
}

WarpStack& WarpStack::add_mobius() {
  return add(MobiusLayer(layer_input_domain(layers_.size())));
}

Index WarpStack::num_params() const {
  Index n = 0;
  for (const auto& l : layers_) n += layer_param_count(l);
  return n;
}

std::vector<ParamBlock> WarpStack::blocks() const {
  std::vector<ParamBlock> out;
  Index off = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    ParamBlock b;
    b.layer = i;
    b.offset = off;
    b.size = layer_param_count(layers_[i]);
    b.random_weights = !std::holds_alternative<MobiusLayer>(layers_[i]);
    off += b.size;
    out.push_back(b);
  }
  return out;
}

VectorXd WarpStack::params() const {
  VectorXd p(num_params());
  Index off = 0;
  for (const auto& layer : layers_) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, AwuLayer>) {
            p.segment(off, l.tweights.size()) = l.tweights;
            off += l.tweights.size();
          } else if constexpr (std::is_same_v<T, RbfLayer>) {
            p(off++) = l.tweight;
          } else {
            for (int k = 0; k < 8; ++k) p(off++) = l.a[k];
          }
        },
        layer);
  }
  return p;
}

void WarpStack::set_params(const VectorXd& p) {
  if (p.size() != num_params()) throw InvalidParameterError("warp parameter vector has wrong length");
  Index off = 0;
  for (auto& layer : layers_) {
    std::visit(
        [&](auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, AwuLayer>) {
            l.tweights = p.segment(off, l.tweights.size());
            off += l.tweights.size();
          } else if constexpr (std::is_same_v<T, RbfLayer>) {
            l.tweight = p(off++);
          } else {
            for (int k = 0; k < 8; ++k) l.a[k] = p(off++);
          }
        },
        layer);
  }
}

bool WarpStack::admissible() const {
  for (const auto& layer : layers_) {
    if (const auto* m = std::get_if<MobiusLayer>(&layer); m && !m->pole_outside_input()) return false;
  }
  return true;
}

std::vector<RbfLayer> build_sr_rbf(int resolution, const Domain& input) {
  if (resolution < 1) throw InvalidParameterError("SR-RBF resolution must be >= 1");
  if (input.dim() != 2) throw InvalidParameterError("SR-RBF units require a 2D domain");
  int per_axis = 1;
  for (int i = 0; i < resolution; ++i) per_axis *= 3;
  const double intervals = per_axis - 1;
  // 2 (3^l - 1)^2 on the unit square; scaled by the squared side otherwise
  const double scale = 2.0 * intervals * intervals / (input.side(0) * input.side(1));
  std::vector<RbfLayer> out;
  out.reserve(static_cast<std::size_t>(per_axis) * per_axis);
  for (int row = 0; row < per_axis; ++row) {
    for (int col = 0; col < per_axis; ++col) {
      Eigen::Vector2d c(input.lower(0) + input.side(0) * col / intervals,
                        input.lower(1) + input.side(1) * row / intervals);
      out.emplace_back(c, scale, kRbfIdentityTweight);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composed forward / reverse passes

WarpTape warp_record(const WarpStack& stack, const LocationSet& s) {
  if (s.cols() != stack.dim()) throw InvalidParameterError("location dimension does not match warp stack");
  WarpTape tape;
  tape.num_points = s.rows();
  if (stack.empty()) {
    tape.output = s;
    return tape;
  }
  const LocationSet& knots = stack.knots();
  if (knots.rows() < 2) throw InvalidParameterError("warp stack has no knots");
  MatrixXd x(s.rows() + knots.rows(), s.cols());
  x << s, knots;
  const auto& layers = stack.layers();
  tape.inputs.reserve(layers.size());
  tape.unscaled.reserve(layers.size());
  tape.records.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    MatrixXd u = layer_forward(layers[i], x);
    ScalingRecord rec = make_scaling_record(u.bottomRows(knots.rows()), static_cast<int>(i));
    MatrixXd next = rescale(u, rec);
    tape.inputs.push_back(std::move(x));
    tape.unscaled.push_back(std::move(u));
    tape.records.push_back(std::move(rec));
    x = std::move(next);
  }
  tape.output = std::move(x);
  return tape;
}

WarpResult warp_forward(const WarpStack& stack, const LocationSet& s) {
  WarpTape tape = warp_record(stack, s);
  WarpResult res;
  res.warped = tape.warped();
  const Index m = stack.knots().rows();
  for (std::size_t i = 0; i < tape.inputs.size(); ++i) {
    if (i + 1 < tape.inputs.size()) res.knot_images.push_back(tape.inputs[i + 1].bottomRows(m));
    else res.knot_images.push_back(tape.output.bottomRows(m));
  }
  return res;
}

VectorXd warp_backprop(const WarpStack& stack, const WarpTape& tape, const MatrixXd& cotangent) {
  if (cotangent.rows() != tape.num_points || cotangent.cols() != stack.dim())
    throw InvalidParameterError("cotangent shape does not match warped locations");
  VectorXd grad = VectorXd::Zero(stack.num_params());
  if (stack.empty()) return grad;
  const Index m = stack.knots().rows();
  const Index n = tape.num_points;
  MatrixXd dy = MatrixXd::Zero(n + m, stack.dim());
  dy.topRows(n) = cotangent;
  const auto blocks = stack.blocks();
  for (std::size_t ii = stack.size(); ii-- > 0;) {
    const ScalingRecord& rec = tape.records[ii];
    const MatrixXd& u = tape.unscaled[ii];
    MatrixXd du(u.rows(), u.cols());
    for (Index k = 0; k < u.cols(); ++k) {
      const double range = rec.max(k) - rec.min(k);
      const double inv = 1.0 / range;
      double dmin = 0.0, dmax = 0.0;
      for (Index i = 0; i < u.rows(); ++i) {
        const double g = dy(i, k);
        du(i, k) = g * inv;
        dmin += g * (u(i, k) - rec.max(k));
        dmax -= g * (u(i, k) - rec.min(k));
      }
      du(n + rec.argmin[k], k) += dmin * inv * inv;
      du(n + rec.argmax[k], k) += dmax * inv * inv;
    }
    MatrixXd dx;
    const ParamBlock& b = blocks[ii];
    layer_backward(stack.layers()[ii], tape.inputs[ii], du, dx, grad.segment(b.offset, b.size));
    dy = std::move(dx);
  }
  return grad;
}

VectorXd warp_gradient(const WarpStack& stack, const LocationSet& s, const MatrixXd& cotangent) {
  return warp_backprop(stack, warp_record(stack, s), cotangent);
}

LocationSet regular_grid(const Domain& domain, int per_dim) {
  if (per_dim < 1) throw InvalidParameterError("grid needs at least one point per dimension");
  const int d = domain.dim();
  auto coord = [&](int k, int j) {
    return per_dim == 1 ? 0.5 * (domain.lower(k) + domain.upper(k))
                        : domain.lower(k) + domain.side(k) * j / static_cast<double>(per_dim - 1);
  };
  if (d == 1) {
    LocationSet g(per_dim, 1);
    for (int j = 0; j < per_dim; ++j) g(j, 0) = coord(0, j);
    return g;
  }
  LocationSet g(static_cast<Index>(per_dim) * per_dim, 2);
  for (int r = 0; r < per_dim; ++r)
    for (int c = 0; c < per_dim; ++c) {
      g(static_cast<Index>(r) * per_dim + c, 0) = coord(0, c);
      g(static_cast<Index>(r) * per_dim + c, 1) = coord(1, r);
    }
  return g;
}

InjectivityReport injectivity_check(const WarpStack& stack, int grid_per_dim) {
  if (grid_per_dim < 16) throw InvalidParameterError("injectivity check needs >= 16 grid points per dimension");
  WarpStack s = stack;
  const Domain& dom = stack.domain();
  const LocationSet grid = regular_grid(dom, grid_per_dim);
  if (s.knots().rows() < 2 && !s.empty()) s.set_knots(grid);
  InjectivityReport rep;
  if (dom.dim() == 1) {
    const LocationSet f = warp_forward(s, grid).warped;
    double min_slope = std::numeric_limits<double>::infinity();
    int sign = 0;
    for (Index i = 0; i + 1 < f.rows(); ++i) {
      const double slope = (f(i + 1, 0) - f(i, 0)) / (grid(i + 1, 0) - grid(i, 0));
      const int sg = slope > 0 ? 1 : (slope < 0 ? -1 : 0);
      if (sg == 0 || (sign != 0 && sg != sign)) rep.injective = false;
      if (sign == 0) sign = sg;
      min_slope = std::min(min_slope, std::abs(slope));
    }
    rep.worst = min_slope;
    return rep;
  }
  // central differences of the composed map in each coordinate
  const double h0 = 1e-6 * dom.side(0), h1 = 1e-6 * dom.side(1);
  const Index n = grid.rows();
  MatrixXd probe(4 * n, 2);
  for (Index i = 0; i < n; ++i) {
    probe.row(4 * i) = grid.row(i) + Eigen::RowVector2d(h0, 0);
    probe.row(4 * i + 1) = grid.row(i) - Eigen::RowVector2d(h0, 0);
    probe.row(4 * i + 2) = grid.row(i) + Eigen::RowVector2d(0, h1);
    probe.row(4 * i + 3) = grid.row(i) - Eigen::RowVector2d(0, h1);
  }
  const LocationSet f = warp_forward(s, probe).warped;
  double min_det = std::numeric_limits<double>::infinity();
  int sign = 0;
  for (Index i = 0; i < n; ++i) {
    const Eigen::RowVector2d dx = (f.row(4 * i) - f.row(4 * i + 1)) / (2 * h0);
    const Eigen::RowVector2d dy = (f.row(4 * i + 2) - f.row(4 * i + 3)) / (2 * h1);
    const double det = dx(0) * dy(1) - dx(1) * dy(0);
    const int sg = det > 0 ? 1 : (det < 0 ? -1 : 0);
    if (sg == 0 || (sign != 0 && sg != sign)) rep.injective = false;
    if (sign == 0) sign = sg;
    min_det = std::min(min_det, std::abs(det));
  }
  rep.worst = min_det;
  return rep;
}

}  // namespace deepwarp
