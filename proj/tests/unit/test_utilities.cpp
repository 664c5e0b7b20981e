#include "deepsc/utilities.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace deepsc;

namespace {

std::vector<UtilitySpec> all_utilities() {
  return {UtilitySpec::power(0.5), UtilitySpec::power(0.2), UtilitySpec::power(0.9),
          UtilitySpec::log(), UtilitySpec::nonhara()};
}

std::vector<double> grid() {
  std::vector<double> g;
  for (double e = -3.0; e <= 3.0; e += 0.125) g.push_back(std::exp(e));
  return g;
}

}  // namespace

TEST_CASE("Fenchel-Young residual is nonnegative on the grid") {
  for (const auto& u : all_utilities()) {
    double worst = 0.0;
    for (double x : grid())
      for (double y : grid()) worst = std::min(worst, legendre_residual(u, x, y));
    INFO(u.name());
    CHECK(worst >= -1e-12);
  }
}

TEST_CASE("Fenchel-Young equality at the inverse marginal") {
  for (const auto& u : all_utilities())
    for (double y : grid()) {
      const double x = inverse_marginal(u, y);
      CHECK(std::abs(legendre_residual(u, x, y)) < 1e-9 * (1.0 + std::abs(u_eval(u, x).value)));
      CHECK(u_eval(u, x).d1 == doctest::Approx(y).epsilon(1e-10));
    }
}

TEST_CASE("derivatives match central differences") {
  for (const auto& u : all_utilities())
    for (double x : {0.3, 1.0, 2.5}) {
      const double h = 1e-5 * x;
      const Derivs d = u_eval(u, x);
      CHECK(d.d1 == doctest::Approx((u_eval(u, x + h).value - u_eval(u, x - h).value) / (2 * h)).epsilon(1e-7));
      CHECK(d.d2 == doctest::Approx((u_eval(u, x + h).d1 - u_eval(u, x - h).d1) / (2 * h)).epsilon(1e-6));
      const Derivs e = dual_eval(u, x);
      CHECK(e.d1 == doctest::Approx((dual_eval(u, x + h).value - dual_eval(u, x - h).value) / (2 * h)).epsilon(1e-7));
      CHECK(e.d2 == doctest::Approx((dual_eval(u, x + h).d1 - dual_eval(u, x - h).d1) / (2 * h)).epsilon(1e-6));
      CHECK(d.d2 < 0.0);
      CHECK(e.d2 > 0.0);
    }
}

TEST_CASE("closed forms") {
  CHECK(u_eval(UtilitySpec::power(0.5), 4.0).value == doctest::Approx(4.0));
  CHECK(dual_eval(UtilitySpec::log(), 1.0).value == doctest::Approx(-1.0));
  // non-HARA: U~(1) = 4/3 and U(2) = 10/3
  CHECK(dual_eval(UtilitySpec::nonhara(), 1.0).value == doctest::Approx(4.0 / 3.0));
  CHECK(u_eval(UtilitySpec::nonhara(), 2.0).value == doctest::Approx(10.0 / 3.0));
  CHECK(u_eval(UtilitySpec::nonhara(), 2.0).d1 == doctest::Approx(1.0));
}

TEST_CASE("terminal gain extends the utility") {
  const auto p = UtilitySpec::power(0.5);
  CHECK(terminal_gain(p, -1.0) == 0.0);
  CHECK(terminal_gain(p, 0.0) == 0.0);
  CHECK(terminal_gain_grad(p, -1.0) == 0.0);
  CHECK(terminal_gain(p, 4.0) == doctest::Approx(4.0));
  const auto l = UtilitySpec::log();
  CHECK(terminal_gain(l, 1e-30) == kLogClip);
  CHECK(terminal_clip_active(l, 1e-30));
  CHECK(terminal_gain_grad(l, 1e-30) == 0.0);
  CHECK_FALSE(terminal_clip_active(l, 1.0));
}

TEST_CASE("domain errors and names") {
  CHECK_THROWS_AS(u_eval(UtilitySpec::log(), 0.0), std::domain_error);
  CHECK_THROWS_AS(dual_eval(UtilitySpec::log(), -1.0), std::domain_error);
  CHECK(utility_from_name("non-hara").kind == UtilityKind::NonHara);
  CHECK(utility_from_name("power", 0.3).p == 0.3);
  CHECK_THROWS(utility_from_name("exponential"));
}

TEST_CASE("tape functions agree with the plain ones") {
  const auto u = UtilitySpec::nonhara();
  CHECK(gain_fn(u)->f(2.0) == doctest::Approx(10.0 / 3.0));
  CHECK(dual_fn(u)->df(1.3) == doctest::Approx(dual_eval(u, 1.3).d1));
  CHECK(dual_grad_fn(u)->df(1.3) == doctest::Approx(dual_eval(u, 1.3).d2));
}
