#include "doctest.h"

#include "deepwarp/scoring.hpp"

using namespace deepwarp;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("MAPE and RMSPE") {
  const VectorXd t = vec({1.0, 2.0});
  CHECK(mape(t, t) == 0.0);
  CHECK(rmspe(t, t) == 0.0);
  CHECK(mape(t, vec({0.0, 3.0})) == 1.0);
  CHECK(rmspe(t, vec({0.0, 3.0})) == 1.0);
  CHECK(mape(t, vec({1.0, 0.0})) == 1.0);
  CHECK(rmspe(t, vec({1.0, 0.0})) == doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS_AS(mape(VectorXd(), VectorXd()), InvalidParameterError);
  CHECK_THROWS_AS(rmspe(t, vec({1.0})), InvalidParameterError);
}

TEST_CASE("Gaussian CRPS") {
  const double at_mean = crps_gaussian(vec({0.0}), vec({1.0}), vec({0.0}));
  CHECK(at_mean == doctest::Approx(2.0 / std::sqrt(2.0 * M_PI) - 1.0 / std::sqrt(M_PI)));
  CHECK(at_mean == doctest::Approx(0.23370).epsilon(1e-4));
  CHECK(crps_gaussian(vec({0.3}), vec({1e-12}), vec({0.3})) < 1e-11);
  const double a = 2.5;
  CHECK(crps_gaussian(vec({a * 0.2}), vec({a * 0.7}), vec({a * -0.4})) ==
        doctest::Approx(a * crps_gaussian(vec({0.2}), vec({0.7}), vec({-0.4}))));
}

TEST_CASE("Gaussian CRPS against its defining expectation") {
  // E|X - y| - E|X - X'| / 2 by Monte Carlo
  RngStream rng(1);
  const int n = 1000000;
  const double y = 0.0;
  VectorXd d(n);
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(), x2 = rng.normal();
    d(i) = std::abs(x - y) - 0.5 * std::abs(x - x2);
  }
  const double m = d.mean();
  const double se = std::sqrt((d.array() - m).square().sum() / (n - 1.0) / n);
  CHECK(std::abs(m - crps_gaussian(vec({0.0}), vec({1.0}), vec({y}))) < 3.0 * se);
}

TEST_CASE("sample CRPS") {
  MatrixXd s(1, 2);
  s << 0.0, 2.0;
  CHECK(crps_samples(s, vec({1.0})) == doctest::Approx(0.5));
  s << 1.0, 1.0;
  CHECK(crps_samples(s, vec({1.0})) == 0.0);
  CHECK_THROWS_AS(crps_samples(MatrixXd::Zero(1, 1), vec({1.0})), InvalidParameterError);
  // O(M log M) pair sum equals the direct double sum
  RngStream rng(2);
  MatrixXd r(3, 37);
  for (Index i = 0; i < r.size(); ++i) r.data()[i] = rng.normal();
  const VectorXd t = vec({0.1, -1.0, 2.0});
  double direct = 0.0;
  for (Index i = 0; i < 3; ++i) {
    double a = 0.0, b = 0.0;
    for (Index j = 0; j < 37; ++j) {
      a += std::abs(r(i, j) - t(i));
      for (Index k = 0; k < 37; ++k) b += std::abs(r(i, j) - r(i, k));
    }
    direct += a / 37.0 - b / (2.0 * 37.0 * 37.0);
  }
  CHECK(crps_samples(r, t) == doctest::Approx(direct / 3.0).epsilon(1e-12));
}

TEST_CASE("interval score") {
  CHECK(interval_score95(vec({-1.96}), vec({1.96}), vec({0.0})) == doctest::Approx(3.92));
  CHECK(interval_score95(vec({-1.96}), vec({1.96}), vec({2.96})) == doctest::Approx(43.92));
  CHECK(interval_score95(vec({-1.96}), vec({1.96}), vec({-2.96})) == doctest::Approx(43.92));
  CHECK(interval_score95(vec({-1.0}), vec({1.0}), vec({0.0})) < interval_score95(vec({-2.0}), vec({2.0}), vec({0.0})));
  CHECK_THROWS_AS(interval_score95(vec({1.0}), vec({0.0}), vec({0.0})), InvalidParameterError);
}

TEST_CASE("threat score") {
  const VectorXd x = vec({1, 5, 2, 7});
  CHECK(threat_score(x, x, 3, 3) == 1.0);
  CHECK(threat_score(vec({1, 1, 9, 9}), vec({9, 9, 1, 1}), 5, 5) == 0.0);
  // 2 TP, 1 FP, 1 FN
  CHECK(threat_score(vec({1, 1, 1, 9, 9}), vec({1, 1, 9, 1, 9}), 5, 5) == 0.5);
  // strict inequality at the threshold
  CHECK(threat_score(vec({5}), vec({5}), 5, 5) == 0.0);
  // thresholds differ between fields
  CHECK(threat_score(vec({10, 20}), vec({1, 2}), 15, 1.5) == 1.0);
}

TEST_CASE("scores are permutation invariant") {
  RngStream rng(3);
  const VectorXd t = rng.normal_vector(20), m = rng.normal_vector(20);
  const VectorXd sd = rng.normal_vector(20).cwiseAbs();
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(20);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 20, rng.engine());
  CHECK(mape(perm * t, perm * m) == doctest::Approx(mape(t, m)));
  CHECK(rmspe(perm * t, perm * m) == doctest::Approx(rmspe(t, m)));
  CHECK(crps_gaussian(perm * m, perm * sd, perm * t) == doctest::Approx(crps_gaussian(m, sd, t)));
  CHECK(threat_score(perm * m, perm * t, 0.0, 0.1) == threat_score(m, t, 0.0, 0.1));
}

TEST_CASE("Gaussian CRPS is minimised at the true mean") {
  // expected CRPS under Y ~ N(0.3, 1) for reported means on a grid, sd = 1
  RngStream rng(4);
  const int n = 20000;
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = 0.3 + rng.normal();
  double best = 1e9, arg = 0.0;
  for (int k = -10; k <= 10; ++k) {
    const double mu = 0.3 + 0.1 * k;
    const double v = crps_gaussian(VectorXd::Constant(n, mu), VectorXd::Ones(n), y);
    if (v < best) {
      best = v;
      arg = mu;
    }
  }
  CHECK(std::abs(arg - 0.3) <= 0.1 + 1e-12);
}
