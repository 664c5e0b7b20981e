#include "deepsc/constraints.hpp"

#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

using namespace deepsc;
using Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace {

VectorXd random_vec(std::mt19937_64& g, int m, double scale = 2.0) {
  std::normal_distribution<> n(0.0, scale);
  VectorXd v(m);
  for (int i = 0; i < m; ++i) v(i) = n(g);
  return v;
}

std::vector<ConstraintSet> sets(int m) {
  VectorXd lo = VectorXd::Constant(m, -0.5), hi = VectorXd::Constant(m, 1.5);
  return {ConstraintSet::full(m), ConstraintSet::cone(m), ConstraintSet::ball(m, 0.7),
          ConstraintSet::box(lo, hi), ConstraintSet::box(VectorXd::Zero(m), VectorXd::Zero(m))};
}

}  // namespace

TEST_CASE("support function is positively homogeneous") {
  std::mt19937_64 g(3);
  for (int m : {1, 3, 6})
    for (const auto& s : sets(m))
      for (int i = 0; i < 50; ++i) {
        VectorXd z = random_vec(g, m);
        if (s.kind == SetKind::Cone) z = z.cwiseAbs();
        if (s.kind == SetKind::Full) z.setZero();
        const double lam = std::exp(random_vec(g, 1, 1.0)(0));
        INFO(s.name());
        CHECK(support(s, lam * z) == doctest::Approx(lam * support(s, z)).epsilon(1e-12));
      }
}

TEST_CASE("support values") {
  VectorXd z(2);
  z << 3, -4;
  CHECK(support(ConstraintSet::ball(2, 2.0), z) == doctest::Approx(10.0));
  CHECK(std::isinf(support(ConstraintSet::full(2), z)));
  CHECK(std::isinf(support(ConstraintSet::cone(2), z)));
  CHECK(support(ConstraintSet::cone(2), z.cwiseAbs()) == 0.0);
  CHECK(support(ConstraintSet::full(2), VectorXd::Zero(2)) == 0.0);
  // box [-1, 2]^2: sup over pi of -pi.z
  const auto box = ConstraintSet::box(VectorXd::Constant(2, -1), VectorXd::Constant(2, 2));
  CHECK(support(box, z) == doctest::Approx(3.0 + 8.0));
  // sup over K >= -pi.z for every pi in K
  std::mt19937_64 g(5);
  for (const auto& s : sets(3)) {
    if (s.kind == SetKind::Full || s.kind == SetKind::Cone) continue;
    for (int i = 0; i < 30; ++i) {
      const VectorXd pi = project_hard(s, random_vec(g, 3));
      const VectorXd w = random_vec(g, 3);
      CHECK(support(s, w) >= -pi.dot(w) - 1e-12);
    }
  }
}

TEST_CASE("hard projections land in the set") {
  std::mt19937_64 g(9);
  for (int m : {1, 2, 5})
    for (const auto& s : sets(m))
      for (ConeRule cr : {ConeRule::Max, ConeRule::Square})
        for (BallRule br : {BallRule::Radial, BallRule::ExpRescale})
          for (int i = 0; i < 40; ++i) {
            const VectorXd x = random_vec(g, m, 3.0);
            INFO(s.name());
            CHECK(contains(s, project_hard(s, x, cr, br)));
          }
}

TEST_CASE("projections are identities inside the set") {
  VectorXd x(2);
  x << 0.2, 0.3;
  CHECK(project_hard(ConstraintSet::ball(2, 1.0), x) == x);
  CHECK(project_hard(ConstraintSet::cone(2), x) == x);
  VectorXd far(2);
  far << 3, 4;
  CHECK(project_hard(ConstraintSet::ball(2, 1.0), far).norm() == doctest::Approx(1.0));
  CHECK(project_hard(ConstraintSet::ball(2, 1.0), far, ConeRule::Max, BallRule::ExpRescale).norm() <
        1.0);
}

TEST_CASE("taped projections and penalties agree with plain versions") {
  std::mt19937_64 g(13);
  const int m = 3;
  for (const auto& s : sets(m)) {
    Matrix raw(4, m);
    for (int r = 0; r < 4; ++r) raw.row(r) = random_vec(g, m).transpose();
    ad::Tape t;
    const ad::Var x = t.constant(raw);
    const Matrix hard = t.value(project_hard(t, s, x));
    const Matrix pen = t.value(penalty(t, s, x, {}));
    for (int r = 0; r < 4; ++r) {
      CHECK((hard.row(r).transpose() - project_hard(s, raw.row(r).transpose())).norm() < 1e-14);
      CHECK(pen(r, 0) == doctest::Approx(penalty(s, raw.row(r).transpose(), {})));
    }
    // dual projection lands where the support is finite
    const Matrix dual = t.value(project_dual(t, s, x));
    for (int r = 0; r < 4; ++r) CHECK(std::isfinite(support(s, dual.row(r).transpose())));
  }
}

TEST_CASE("penalties vanish inside and grow outside") {
  PenaltyConfig cfg;
  const auto ball = ConstraintSet::ball(2, 1.0);
  VectorXd in(2), out(2);
  in << 0.3, 0.4;
  out << 3, 4;
  CHECK(penalty(ball, in, cfg) == 0.0);
  CHECK(penalty(ball, out, cfg) == doctest::Approx(1000.0 * 16.0));
  CHECK(penalty(ConstraintSet::cone(2), -out, cfg) == 0.0);
}

TEST_CASE("complementarity residual") {
  const auto cone = ConstraintSet::cone(1);
  VectorXd q(1), v(1);
  q << 0.2;
  v << 0.5;
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(1, 1, 0.25);
  CHECK(complementarity_residual(cone, 1.0, q, s, v) == doctest::Approx(0.2 * 0.5 / 0.25));
  v << -0.5;
  CHECK_THROWS_AS(complementarity_residual(cone, 1.0, q, s, v), std::domain_error);
}

TEST_CASE("names and validation") {
  CHECK(set_kind_from_name("ball") == SetKind::Ball);
  CHECK_THROWS(set_kind_from_name("simplex"));
  CHECK_THROWS(ConstraintSet::ball(2, -1.0));
  CHECK_THROWS(project_hard(ConstraintSet::cone(2), VectorXd::Zero(3)));
}
