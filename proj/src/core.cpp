#include "deepwarp/core.hpp"

#include <algorithm>
#include <numeric>

namespace deepwarp {

Domain::Domain(VectorXd lo, VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size() || lower.size() < 1 || lower.size() > 2)
    throw InvalidParameterError("domain must have dimension 1 or 2");
  for (Index k = 0; k < lower.size(); ++k) {
    if (!(lower(k) < upper(k)))
      throw InvalidParameterError("domain lower bound must be below upper bound");
  }
}

Domain Domain::unit(int dim) { return Domain(VectorXd::Zero(dim), VectorXd::Ones(dim)); }

Domain Domain::bounding_box(const LocationSet& locations) {
  if (locations.rows() == 0) throw DegenerateDataError("no locations");
  VectorXd lo = locations.colwise().minCoeff().transpose();
  VectorXd hi = locations.colwise().maxCoeff().transpose();
  for (Index k = 0; k < lo.size(); ++k) {
    if (!(hi(k) > lo(k))) throw DegenerateDataError("locations are constant along an axis");
  }
  return Domain(lo, hi);
}

bool Domain::contains(const Eigen::Ref<const VectorXd>& p) const {
  for (Index k = 0; k < lower.size(); ++k) {
    if (p(k) < lower(k) || p(k) > upper(k)) return false;
  }
  return true;
}

Dataset::Dataset(LocationSet locs, VectorXd obs, double noise)
    : locations(std::move(locs)), z(std::move(obs)), noise_var(noise) {
  if (locations.rows() < 1) throw DegenerateDataError("dataset is empty");
  if (z.size() != locations.rows())
    throw InvalidParameterError("observation count does not match location count");
  if (!(noise_var > 0.0)) throw InvalidParameterError("noise variance must be positive");
  if (!locations.allFinite() || !z.allFinite())
    throw InvalidParameterError("dataset contains non-finite values");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finaliser
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double RngStream::normal() { return normal_(engine_); }
double RngStream::uniform() { return uniform_(engine_); }
double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }

VectorXd RngStream::normal_vector(Index n) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal();
  return v;
}

RngStream RngStream::substream(std::uint64_t index) const {
  return RngStream(mix_seed(seed_, index));
}

KnotSet make_knots(const LocationSet& locations, Index cap, std::uint64_t seed) {
  if (cap < 2) throw InvalidParameterError("knot cap must be at least 2");
  const Index n = locations.rows();
  const Index d = locations.cols();
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  auto row_less = [&](Index a, Index b) {
    for (Index k = 0; k < d; ++k) {
      if (locations(a, k) != locations(b, k)) return locations(a, k) < locations(b, k);
    }
    return false;
  };
  auto row_equal = [&](Index a, Index b) {
    for (Index k = 0; k < d; ++k) {
      if (locations(a, k) != locations(b, k)) return false;
    }
    return true;
  };
  std::sort(order.begin(), order.end(), row_less);
  order.erase(std::unique(order.begin(), order.end(), row_equal), order.end());
  if (order.size() < 2) throw DegenerateDataError("fewer than 2 unique locations");

  if (static_cast<Index>(order.size()) > cap) {
    // partial Fisher-Yates; keep the chosen rows in sorted order
    RngStream rng(seed);
    std::vector<Index> pos(order.size());
    std::iota(pos.begin(), pos.end(), Index{0});
    for (Index i = 0; i < cap; ++i) {
      std::uniform_int_distribution<Index> pick(i, static_cast<Index>(pos.size()) - 1);
      std::swap(pos[i], pos[pick(rng.engine())]);
    }
    pos.resize(cap);
    std::sort(pos.begin(), pos.end());
    std::vector<Index> chosen;
    chosen.reserve(cap);
    for (Index p : pos) chosen.push_back(order[p]);
    order = std::move(chosen);
  }

  KnotSet knots;
  knots.coords.resize(static_cast<Index>(order.size()), d);
  for (Index i = 0; i < static_cast<Index>(order.size()); ++i)
    knots.coords.row(i) = locations.row(order[i]);
  return knots;
}

PredictiveSummary gaussian_summary(const VectorXd& mean, const VectorXd& variance) {
  PredictiveSummary p;
  p.mean = mean;
  p.sd = variance.cwiseMax(0.0).cwiseSqrt();
  p.lower95 = mean - kZ975 * p.sd;
  p.upper95 = mean + kZ975 * p.sd;
  return p;
}

double sample_variance(const VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace deepwarp
