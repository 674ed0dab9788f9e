#pragma once

#include <array>
#include <complex>
#include <cmath>
#include <optional>
#include <variant>
#include <vector>

#include "deepwarp/core.hpp"

namespace deepwarp {

/// Offset c1 of every warped domain [c1, c1 + 1]^d.
inline constexpr double kWarpOffset = 0.0;
/// Rescaling refuses knot images whose spread falls below this.
inline constexpr double kDegeneracyFloor = 1e-12;
/// Upper admissible RBF weight, e^{3/2}/2.
inline const double kRbfWeightUpper = std::exp(1.5) / 2.0;
/// Transformed RBF weight that back-transforms to w = 0 (no warping).
inline const double kRbfIdentityTweight = -(1.5 - std::log(2.0));

inline double sigmoid(double s, double steepness, double center) {
  return 1.0 / (1.0 + std::exp(-steepness * (s - center)));
}

/// w = (1 + e^{3/2}/2) logistic(t) - 1, mapping R onto (-1, e^{3/2}/2).
double rbf_weight(double tweight);
double rbf_weight_derivative(double tweight);
double rbf_tweight(double weight);

/// Monotone map of one axis: w_0 s_k + sum_j w_j sigmoid(s_k; steepness, c_j),
/// with every weight w = exp(tweight) > 0. Other axes pass through.
struct AwuLayer {
  int axis = 0;
  double steepness = 200.0;
  VectorXd centers;   // sigmoid inflection points, strictly increasing
  VectorXd tweights;  // [linear, sigmoid_1, ..., sigmoid_{r-1}]

  /// `basis_count` = 1 linear term + (basis_count - 1) sigmoids whose centers
  /// are spaced regularly over [lo, hi] inclusive.
  AwuLayer(int axis, Index basis_count, double steepness, double lo, double hi);

  Index basis_count() const { return tweights.size(); }
  VectorXd weights() const { return tweights.array().exp(); }
  /// Basis evaluations [s, sigmoid_1(s), ...] for a scalar input.
  VectorXd basis(double s) const;
};

/// Perrin-type radial unit s -> s + w (s - c) exp(-a |s - c|^2), 2D only.
struct RbfLayer {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  double scale = 8.0;
  double tweight = kRbfIdentityTweight;

  RbfLayer() = default;
  RbfLayer(Eigen::Vector2d c, double a, double t = kRbfIdentityTweight)
      : centroid(c), scale(a), tweight(t) {}

  double weight() const { return forced_weight ? *forced_weight : rbf_weight(tweight); }

  /// Bypasses the admissible interval. Only for constructing folding
  /// counterexamples in tests; gradients ignore it.
  void force_weight_for_testing(double w) { forced_weight = w; }
  std::optional<double> forced_weight;
};

/// Complex rational map (a1 z + a2) / (a3 z + a4) on z = s1 + i s2.
/// `a` stores (Re a1, Im a1, Re a2, Im a2, Re a3, Im a3, Re a4, Im a4).
struct MobiusLayer {
  std::array<double, 8> a{1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  Domain input;  // square the pole must stay outside of

  MobiusLayer() : input(Domain::unit(2)) {}
  explicit MobiusLayer(Domain in) : input(std::move(in)) {}

  std::complex<double> coef(int k) const { return {a[2 * k], a[2 * k + 1]}; }
  /// False when a3 != 0 and the pole -a4/a3 lies inside `input`.
  bool pole_outside_input() const;
};

using WarpLayer = std::variant<AwuLayer, RbfLayer, MobiusLayer>;

/// Segment of the flat parameter vector owned by one layer.
struct ParamBlock {
  std::size_t layer = 0;
  Index offset = 0;
  Index size = 0;
  /// Weights are random in the stochastic model; Möbius coefficients are not.
  bool random_weights = true;
};

/// Per-dimension affine map sending the knot image onto [c1, c1 + 1].
struct ScalingRecord {
  VectorXd min;
  VectorXd max;
  std::vector<Index> argmin;  // knot row attaining the min, lowest index on ties
  std::vector<Index> argmax;
  double offset = kWarpOffset;
};

ScalingRecord make_scaling_record(const MatrixXd& unscaled_knots, int layer_index = -1);
LocationSet rescale(const LocationSet& unscaled, const ScalingRecord& record);

LocationSet awu_forward(const AwuLayer& layer, const LocationSet& s);
LocationSet rbf_forward(const RbfLayer& layer, const LocationSet& s);
LocationSet mobius_forward(const MobiusLayer& layer, const LocationSet& s);

/// Ordered composition of warping layers plus the knots that define the
/// per-layer rescaling. Layer 1 acts on the geographic domain; all later
/// layers act on the unit hypercube.
class WarpStack {
 public:
  WarpStack() = default;
  explicit WarpStack(Domain geographic) : domain_(std::move(geographic)) {}

  const Domain& domain() const { return domain_; }
  int dim() const { return domain_.dim(); }
  Domain layer_input_domain(std::size_t i) const;

  WarpStack& add_awu(int axis, Index basis_count, double steepness = 200.0);
  WarpStack& add_sr_rbf(int resolution);
  WarpStack& add_mobius();
  WarpStack& add(WarpLayer layer);

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const std::vector<WarpLayer>& layers() const { return layers_; }
  std::vector<WarpLayer>& layers() { return layers_; }

  const LocationSet& knots() const { return knots_; }
  void set_knots(LocationSet knots) { knots_ = std::move(knots); }

  Index num_params() const;
  VectorXd params() const;
  void set_params(const VectorXd& flat);
  std::vector<ParamBlock> blocks() const;
  /// Every Möbius pole lies outside its layer's input square.
  bool admissible() const;

 private:
  Domain domain_;
  std::vector<WarpLayer> layers_;
  LocationSet knots_;
};

/// RBF layers of one resolution, centroids on a 3^l x 3^l grid over `input`
/// (row-major), scale 2 (3^l - 1)^2 on the unit square, weights at zero.
std::vector<RbfLayer> build_sr_rbf(int resolution, const Domain& input);

/// Intermediate state of a forward pass, enough to run the reverse pass.
struct WarpTape {
  Index num_points = 0;
  std::vector<MatrixXd> inputs;    // layer inputs, points stacked over knots
  std::vector<MatrixXd> unscaled;  // layer outputs before rescaling
  std::vector<ScalingRecord> records;
  MatrixXd output;

  LocationSet warped() const { return output.topRows(num_points); }
};

WarpTape warp_record(const WarpStack& stack, const LocationSet& s);

struct WarpResult {
  LocationSet warped;
  std::vector<LocationSet> knot_images;  // rescaled knot image after each layer
};

WarpResult warp_forward(const WarpStack& stack, const LocationSet& s);

/// Gradient of sum(cotangent .* warped) w.r.t. the stack's flat parameters.
/// min/max in the rescaling pass their subgradient to the attaining knot.
VectorXd warp_backprop(const WarpStack& stack, const WarpTape& tape, const MatrixXd& cotangent);
VectorXd warp_gradient(const WarpStack& stack, const LocationSet& s, const MatrixXd& cotangent);

struct InjectivityReport {
  bool injective = true;
  /// 1D: smallest |slope| between grid neighbours; 2D: smallest |det J|.
  double worst = 0.0;
};

/// Numerical check over a regular grid of the geographic domain: strict
/// monotonicity in 1D, sign-constant Jacobian determinant in 2D.
InjectivityReport injectivity_check(const WarpStack& stack, int grid_per_dim);

/// Regular grid with `per_dim` points per axis spanning `domain` inclusive.
LocationSet regular_grid(const Domain& domain, int per_dim);

}  // namespace deepwarp
