#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "deepwarp/error.hpp"

namespace deepwarp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// N x d coordinates, one location per row.
using LocationSet = Eigen::MatrixXd;

/// Axis-aligned box. Warped domains are always the unit hypercube.
struct Domain {
  VectorXd lower;
  VectorXd upper;

  Domain() = default;
  Domain(VectorXd lo, VectorXd hi);

  static Domain unit(int dim);
  /// Smallest box containing all rows of `locations`.
  static Domain bounding_box(const LocationSet& locations);

  int dim() const { return static_cast<int>(lower.size()); }
  double side(int k) const { return upper(k) - lower(k); }
  bool contains(const Eigen::Ref<const VectorXd>& point) const;
};

struct Dataset {
  LocationSet locations;
  VectorXd z;
  double noise_var = 1.0;

  Dataset() = default;
  Dataset(LocationSet locs, VectorXd obs, double noise = 1.0);

  Index size() const { return locations.rows(); }
  int dim() const { return static_cast<int>(locations.cols()); }
};

/// Reference locations whose warped images fix each layer's rescaling.
struct KnotSet {
  LocationSet coords;
  Index size() const { return coords.rows(); }
};

/// Seeded pseudo-random stream. Identical seeds reproduce identical draws.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  double normal();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::uint64_t next_u64() { return engine_(); }
  VectorXd normal_vector(Index n);
  /// Independent stream derived deterministically from this stream's seed.
  RngStream substream(std::uint64_t index) const;

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

/// Per-location predictive mean, standard deviation and 95% interval.
struct PredictiveSummary {
  VectorXd mean;
  VectorXd sd;
  VectorXd lower95;
  VectorXd upper95;

  Index size() const { return mean.size(); }
};

/// 0.975 standard normal quantile.
inline constexpr double kZ975 = 1.959963984540054;

/// Gaussian summary from means and variances (variances clipped at 0).
PredictiveSummary gaussian_summary(const VectorXd& mean, const VectorXd& variance);

inline constexpr Index kDefaultKnotCap = 2000;

/// Unique data locations, subsampled uniformly without replacement to `cap`
/// rows when there are more. Output rows are in lexicographic order.
KnotSet make_knots(const LocationSet& locations, Index cap, std::uint64_t seed);
inline KnotSet make_knots(const Dataset& data, Index cap, std::uint64_t seed) {
  return make_knots(data.locations, cap, seed);
}

double sample_variance(const VectorXd& v);

}  // namespace deepwarp
