#include "deepsc/smp.hpp"

#include "doctest.h"

#include <cmath>

using namespace deepsc;

namespace {

MarketCoefficients bs2() {
  Matrix s(2, 2);
  s << 0.25, 0.05, 0.0, 0.3;
  Vector mu(2);
  mu << 0.08, 0.02;
  return MarketCoefficients::constant(0.05, mu, s);
}

SmpConfig small(long iterations) {
  SmpConfig c;
  c.N = 4;
  c.iterations = iterations;
  c.batch = 16;
  return c;
}

}  // namespace

TEST_CASE("controls stay admissible along simulated paths") {
  const DeterministicSmpMarket mk(bs2());
  for (const auto& set : {ConstraintSet::cone(2), ConstraintSet::full(2), ConstraintSet::ball(2, 0.5)}) {
    SmpConfig c = small(20);
    c.init_std = 0.1;
    SmpSolver s(mk, set, UtilitySpec::power(0.5), c);
    s.train();
    const auto sp = s.simulate(IncrementGenerator(8).path_batch(0, 32, c.N, 2));
    INFO(set.name());
    for (int i = 0; i < c.N; ++i) {
      for (Eigen::Index r = 0; r < 32; ++r) {
        CHECK(contains(set, sp.h[i].row(r).transpose()));
        CHECK(std::isfinite(support(set, sp.v[i].row(r).transpose())));
      }
      if (set.kind == SetKind::Cone) CHECK((sp.v[i].array() >= 0.0).all());
      if (set.kind == SetKind::Full) CHECK(sp.v[i].isZero(0.0));
      CHECK((sp.Y[i + 1].array() > 0.0).all());
    }
  }
}

TEST_CASE("loss_Q vanishes when P2 matches the inverse marginal") {
  const auto u = UtilitySpec::power(0.5);
  Matrix Y(3, 1), P(3, 1);
  Y << 0.5, 1.0, 2.0;
  for (int i = 0; i < 3; ++i) P(i) = -dual_eval(u, Y(i)).d1;
  CHECK(loss_Q(Y, P, u) == doctest::Approx(0.0).epsilon(1e-15));
  P(0) += 0.3;
  CHECK(loss_Q(Y, P, u) == doctest::Approx(0.09 / 3));
}

TEST_CASE("bracket round trip") {
  ValueBracket b;
  b.u_low = 1.9;
  b.u_high = 2.1;
  b.se_low = 0.01;
  b.M = 100;
  b.N = 5;
  b.T = 0.2;
  b.eval_seed = 99;
  const auto j = b.to_json();
  const ValueBracket c = ValueBracket::from_json(j);
  CHECK(c.to_json() == j);
  CHECK(c.width() == doctest::Approx(0.2));
  CHECK(c.midpoint() == doctest::Approx(2.0));
}

TEST_CASE("training and bounds are deterministic") {
  HestonParams h;
  const HestonSmpMarket mk(h);
  SmpSolver a(mk, ConstraintSet::full(1), UtilitySpec::power(0.5), small(25));
  SmpSolver b(mk, ConstraintSet::full(1), UtilitySpec::power(0.5), small(25));
  a.train();
  b.train();
  CHECK(a.state().to_json().dump() == b.state().to_json().dump());
  const ValueBracket ba = a.bounds(IncrementGenerator(99), 2048, 512);
  const ValueBracket bb = b.bounds(IncrementGenerator(99), 2048, 1024);
  CHECK(ba.u_low == doctest::Approx(bb.u_low).epsilon(1e-12));
  CHECK(ba.u_high == doctest::Approx(bb.u_high).epsilon(1e-12));
  CHECK(ba.M == 2048);
  CHECK(SmpState::from_json(a.state().to_json()).to_json() == a.state().to_json());
}

TEST_CASE("weak duality on the bracket") {
  // A short run is far from optimal, yet u_low <= u_high up to noise.
  const DeterministicSmpMarket mk(bs2());
  SmpSolver s(mk, ConstraintSet::cone(2), UtilitySpec::log(), small(200));
  s.train();
  const ValueBracket b = s.bounds(IncrementGenerator(4), 1 << 14);
  CHECK(b.u_low <= b.u_high + 3.0 * std::hypot(b.se_low, b.se_high));
}

TEST_CASE("configuration validation") {
  const DeterministicSmpMarket mk(bs2());
  SmpConfig c = small(1);
  c.x0 = 0.0;
  CHECK_THROWS(SmpSolver(mk, ConstraintSet::cone(2), UtilitySpec::log(), c));
  CHECK_THROWS(SmpSolver(mk, ConstraintSet::cone(3), UtilitySpec::log(), small(1)));
  c = small(1);
  c.batch = 7;
  CHECK_THROWS(SmpSolver(mk, ConstraintSet::cone(2), UtilitySpec::log(), c));
}

TEST_CASE("path-dependent market tracks the running maximum") {
  PathDepVolParams p;
  const PathDepSmpMarket mk(p);
  Matrix st = mk.initial_state(4);
  const IncrementGenerator g(3, false);
  for (int i = 0; i < 5; ++i) {
    st = mk.advance(0.04 * i, 0.04, st, g.batch(0, 4, i, p.m));
    for (int j = 0; j < p.m; ++j) CHECK((st.col(p.m + j).array() >= st.col(j).array()).all());
  }
  const MarketSnapshot s = mk.snapshot(0.2, st);
  CHECK(s.features.cols() == 2 * p.m);
  CHECK(s.sigma.cols() == p.m * p.m);
}
