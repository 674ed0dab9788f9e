#include "doctest.h"

#include "deepwarp/warp.hpp"
#include "oracles.hpp"
#include "random_stacks.hpp"

using namespace deepwarp;
using testing_util::random_stack_1d;
using testing_util::random_stack_2d;
using testing_util::uniform_points;

namespace {

LocationSet points(std::initializer_list<std::initializer_list<double>> rows) {
  LocationSet s(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index k = 0;
    for (double v : r) s(i, k++) = v;
    ++i;
  }
  return s;
}

double gradient_error(WarpStack stack, const LocationSet& s, RngStream& rng) {
  const MatrixXd cot = MatrixXd::NullaryExpr(s.rows(), s.cols(), [&] { return rng.normal(); });
  const VectorXd p0 = stack.params();
  const VectorXd g = warp_gradient(stack, s, cot);
  auto f = [&](const VectorXd& p) {
    WarpStack t = stack;
    t.set_params(p);
    return (cot.array() * warp_forward(t, s).warped.array()).sum();
  };
  return oracle::relative_error(g, oracle::central_difference(f, p0));
}

}  // namespace

TEST_CASE("sigmoid") {
  CHECK(sigmoid(0.4, 200.0, 0.4) == 0.5);
  CHECK(sigmoid(1e6, 200.0, 0.4) == 1.0);
  CHECK(1.0 - sigmoid(0.5, 200.0, 0.4) == doctest::Approx(2.0611536e-9).epsilon(1e-6));
}

TEST_CASE("AWU forward") {
  AwuLayer l(0, 2, 200.0, 0.0, 1.0);
  REQUIRE(l.centers.size() == 1);
  CHECK(l.centers(0) == 0.5);

  SUBCASE("identity when sigmoid weights vanish") {
    l.tweights << 0.0, -std::numeric_limits<double>::infinity();
    const LocationSet s = points({{0.1}, {0.5}, {0.93}});
    CHECK(awu_forward(l, s) == s);
  }
  SUBCASE("unit sigmoid weight at its center") {
    l.tweights << 0.0, 0.0;
    CHECK(awu_forward(l, points({{0.5}}))(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("other axis passes through") {
    AwuLayer l2(0, 5, 200.0, 0.0, 1.0);
    l2.tweights.setConstant(0.3);
    const LocationSet s = points({{0.2, 0.7}, {0.8, -3.0}});
    const LocationSet y = awu_forward(l2, s);
    CHECK(y.col(1) == s.col(1));
  }
}

TEST_CASE("AWU is strictly increasing for random positive weights") {
  RngStream rng(1);
  AwuLayer l(0, 51, 200.0, 0.0, 1.0);
  for (Index j = 0; j < l.tweights.size(); ++j) l.tweights(j) = rng.normal() - 2.0;
  LocationSet s(1001, 1);
  for (Index i = 0; i < 1001; ++i) s(i, 0) = i / 1000.0;
  const LocationSet y = awu_forward(l, s);
  bool increasing = true;
  for (Index i = 0; i + 1 < y.rows(); ++i) increasing = increasing && y(i + 1, 0) > y(i, 0);
  CHECK(increasing);
}

TEST_CASE("RBF forward") {
  RbfLayer l(Eigen::Vector2d(0.5, 0.5), 8.0);
  CHECK(l.weight() == doctest::Approx(0.0).epsilon(1e-12));
  const LocationSet s = points({{0.75, 0.5}, {0.5, 0.5}, {0.1, 0.9}});
  CHECK(rbf_forward(l, s).isApprox(s, 1e-14));
  l.tweight = rbf_tweight(1.0);
  const LocationSet y = rbf_forward(l, s);
  CHECK(y(0, 0) == doctest::Approx(0.901633).epsilon(1e-6));
  CHECK(y(0, 1) == doctest::Approx(0.5));
  CHECK(y(1, 0) == 0.5);
  CHECK(y(1, 1) == 0.5);
}

TEST_CASE("RBF weight transform") {
  CHECK(rbf_weight(kRbfIdentityTweight) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(kRbfIdentityTweight == doctest::Approx(-0.8066).epsilon(1e-3));
  CHECK(rbf_weight(-20.0) > -1.0);
  CHECK(rbf_weight(50.0) <= kRbfWeightUpper);
  CHECK(rbf_tweight(rbf_weight(0.7)) == doctest::Approx(0.7));
  CHECK_THROWS_AS(rbf_tweight(3.0), InvalidParameterError);
}

TEST_CASE("SR-RBF construction") {
  const auto l1 = build_sr_rbf(1, Domain::unit(2));
  CHECK(l1.size() == 9);
  CHECK(l1[0].scale == 8.0);
  CHECK(l1[1].centroid.x() == 0.5);
  CHECK(l1[3].centroid.y() == 0.5);
  const auto l2 = build_sr_rbf(2, Domain::unit(2));
  CHECK(l2.size() == 81);
  CHECK(l2[0].scale == 128.0);
  WarpStack stack(Domain::unit(2));
  stack.add_sr_rbf(1);
  RngStream rng(3);
  const LocationSet s = uniform_points(stack.domain(), 30, rng);
  stack.set_knots(s);
  const LocationSet f = warp_forward(stack, s).warped;
  const ScalingRecord rec = make_scaling_record(s);
  CHECK(f.isApprox(rescale(s, rec), 1e-12));
}

TEST_CASE("Möbius forward") {
  MobiusLayer m;
  const LocationSet s = points({{0.2, 0.3}, {0.5, 0.5}});
  CHECK(mobius_forward(m, s) == s);
  m.a = {1, 0, 1, 0, 0, 0, 1, 0};
  CHECK(mobius_forward(m, s).row(0).isApprox(Eigen::RowVector2d(1.2, 0.3)));
  m.a = {2, 0, 0, 0, 0, 0, 1, 0};
  CHECK(mobius_forward(m, s).row(1).isApprox(Eigen::RowVector2d(1.0, 1.0)));
  m.a = {1, 0, 0, 0, 1, 0, -0.5, -0.5};  // pole at 0.5 + 0.5i
  CHECK_FALSE(m.pole_outside_input());
  CHECK_THROWS_AS(mobius_forward(m, s), InvalidParameterError);
}

TEST_CASE("Möbius of Möbius is a Möbius") {
  RngStream rng(9);
  MobiusLayer m1, m2;
  testing_util::randomize_mobius(m1, rng, 0.2);
  const LocationSet grid = regular_grid(Domain::unit(2), 17);
  const LocationSet mid = mobius_forward(m1, grid);
  m2.input = Domain::bounding_box(mid);
  testing_util::randomize_mobius(m2, rng, 0.2);
  const LocationSet twice = mobius_forward(m2, mid);

  using C = std::complex<double>;
  const C a1 = m1.coef(0), a2 = m1.coef(1), a3 = m1.coef(2), a4 = m1.coef(3);
  const C b1 = m2.coef(0), b2 = m2.coef(1), b3 = m2.coef(2), b4 = m2.coef(3);
  const C c[4] = {b1 * a1 + b2 * a3, b1 * a2 + b2 * a4, b3 * a1 + b4 * a3, b3 * a2 + b4 * a4};
  MobiusLayer once;
  for (int k = 0; k < 4; ++k) {
    once.a[2 * k] = c[k].real();
    once.a[2 * k + 1] = c[k].imag();
  }
  REQUIRE(once.pole_outside_input());
  CHECK((mobius_forward(once, grid) - twice).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("rescale") {
  const LocationSet knots = points({{-0.5}, {0.0}, {0.5}});
  const ScalingRecord rec = make_scaling_record(knots);
  const LocationSet y = rescale(knots, rec);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(1, 0) == 0.5);
  CHECK(y(2, 0) == 1.0);

  const ScalingRecord unit = make_scaling_record(points({{0.0}, {1.0}}));
  CHECK(rescale(points({{2.0}}), unit)(0, 0) == 2.0);
  CHECK_THROWS_AS(make_scaling_record(points({{0.3}, {0.3}}), 4), DegenerateWarpError);
  try {
    make_scaling_record(points({{0.3}, {0.3}}), 4);
  } catch (const DegenerateWarpError& e) {
    CHECK(e.layer() == 4);
  }
}

TEST_CASE("rescale with its own record is idempotent on knot extremes") {
  RngStream rng(2);
  const LocationSet knots = uniform_points(Domain::unit(2), 25, rng) * 3.0;
  const ScalingRecord rec = make_scaling_record(knots);
  const LocationSet once = rescale(knots, rec);
  const LocationSet twice = rescale(once, make_scaling_record(once));
  for (int k = 0; k < 2; ++k) {
    CHECK(twice(rec.argmin[k], k) == 0.0);
    CHECK(twice(rec.argmax[k], k) == 1.0);
    CHECK(once.col(k).minCoeff() == 0.0);
    CHECK(once.col(k).maxCoeff() == 1.0);
  }
}

TEST_CASE("warp_forward") {
  RngStream rng(4);
  const LocationSet s = uniform_points(Domain::unit(2), 10, rng);
  WarpStack empty(Domain::unit(2));
  CHECK(warp_forward(empty, s).warped == s);

  WarpStack stack = random_stack_2d(7, rng);
  const WarpResult r = warp_forward(stack, s);
  CHECK(r.knot_images.size() == stack.size());
  for (const auto& img : r.knot_images) {
    CHECK(img.colwise().minCoeff().isApprox(Eigen::RowVector2d(0, 0)));
    CHECK(img.colwise().maxCoeff().isApprox(Eigen::RowVector2d(1, 1)));
  }
}

TEST_CASE("RBF blocks compose rather than sum displacements") {
  RngStream rng(5);
  WarpStack stack = random_stack_2d(2, rng);
  const LocationSet s = uniform_points(Domain::unit(2), 50, rng);
  const LocationSet composed = warp_forward(stack, s).warped;

  // erroneous variant: every unit displaces the original input, displacements summed
  MatrixXd x(s.rows() + stack.knots().rows(), 2);
  x << s, stack.knots();
  MatrixXd summed = x;
  for (const auto& layer : stack.layers()) summed += rbf_forward(std::get<RbfLayer>(layer), x) - x;
  const LocationSet wrong = rescale(summed.topRows(s.rows()), make_scaling_record(summed.bottomRows(stack.knots().rows())));
  CHECK((composed - wrong).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("warp gradient at the identity") {
  RngStream rng(6);
  WarpStack stack(Domain::unit(2));
  stack.add_awu(0, 5).add_sr_rbf(1).add_mobius();
  const LocationSet s = uniform_points(stack.domain(), 25, rng);
  stack.set_knots(uniform_points(stack.domain(), 20, rng));
  CHECK(gradient_error(stack, s, rng) < 1e-4);
}

TEST_CASE("warp gradient matches finite differences on random stacks") {
  RngStream rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    CAPTURE(rep);
    if (rep % 4 == 0) {
      WarpStack stack = random_stack_1d(rng);
      CHECK(gradient_error(stack, uniform_points(stack.domain(), 30, rng), rng) < 1e-4);
    } else {
      WarpStack stack = random_stack_2d(1 + rep % 7, rng);
      CHECK(gradient_error(stack, uniform_points(stack.domain(), 30, rng), rng) < 1e-4);
    }
  }
}

TEST_CASE("vanishing sigmoid weight contributes no gradient") {
  RngStream rng(8);
  WarpStack stack = random_stack_1d(rng);
  auto& awu = std::get<AwuLayer>(stack.layers()[0]);
  awu.tweights(1) = -800.0;
  const LocationSet s = uniform_points(stack.domain(), 20, rng);
  const VectorXd g = warp_gradient(stack, s, MatrixXd::Ones(20, 1));
  CHECK(std::abs(g(1)) < 1e-300);
}

TEST_CASE("injectivity check") {
  RngStream rng(10);
  WarpStack id(Domain::unit(2));
  CHECK(injectivity_check(id, 16).injective);
  for (int rep = 0; rep < 20; ++rep) {
    CHECK(injectivity_check(random_stack_2d(1 + rep % 7, rng), 24).injective);
    CHECK(injectivity_check(random_stack_1d(rng), 64).injective);
  }
  WarpStack fold(Domain::unit(2));
  RbfLayer bad(Eigen::Vector2d(0.5, 0.5), 8.0);
  bad.force_weight_for_testing(3.0);
  fold.add(bad);
  const InjectivityReport rep = injectivity_check(fold, 64);
  CHECK_FALSE(rep.injective);
  CHECK_THROWS_AS(injectivity_check(id, 8), InvalidParameterError);
}

TEST_CASE("parameter round trip") {
  RngStream rng(11);
  WarpStack stack = random_stack_2d(7, rng);
  const VectorXd p = stack.params();
  CHECK(p.size() == stack.num_params());
  WarpStack other = random_stack_2d(7, rng);
  other.set_params(VectorXd::Zero(other.num_params()));
  stack.set_params(p);
  CHECK(stack.params() == p);
  Index covered = 0;
  for (const auto& b : stack.blocks()) covered += b.size;
  CHECK(covered == stack.num_params());
}
