#include "deepsc/benchmarks.hpp"

#include "doctest.h"

#include <cmath>

using namespace deepsc;

namespace {

double merton_closed(double r, double th2, double p, double x0, double T) {
  return std::pow(x0, p) / p * std::exp(p * (r + th2 / (2.0 * (1.0 - p))) * T);
}

MarketCoefficients diag2() {
  Matrix s(2, 2);
  s << 0.2, 0.0, 0.0, 0.3;
  Vector mu(2);
  mu << 0.08, 0.07;
  return MarketCoefficients::constant(0.05, mu, s);
}

}  // namespace

TEST_CASE("non-HARA solution meets its terminal condition") {
  const NonHaraSolution s(0.05, 0.09, 1.0, 0.5);
  const auto u = UtilitySpec::nonhara();
  for (double y : {0.3, 1.0, 2.2}) {
    CHECK(s.dual_value(0.5, y) == doctest::Approx(dual_eval(u, y).value).epsilon(1e-12));
    CHECK(s.dual_dy(0.5, y) == doctest::Approx(dual_eval(u, y).d1).epsilon(1e-12));
  }
  for (double x : {0.5, 1.0, 3.0})
    CHECK(s.primal_value(0.5, x) == doctest::Approx(u_eval(u, x).value).epsilon(1e-10));
}

TEST_CASE("non-HARA with zero rate and zero risk premium is static") {
  const NonHaraSolution s(0.0, 0.0, 2.0, 1.0);
  CHECK(s.solution().value == doctest::Approx(10.0 / 3.0).epsilon(1e-10));
  CHECK(s.solution().y_hat == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(s.dual_value(0.3, 1.7) == doctest::Approx(dual_eval(UtilitySpec::nonhara(), 1.7).value));
}

TEST_CASE("non-HARA dual value solves its linear PDE") {
  const double r = 0.05, th2 = 0.09;
  const NonHaraSolution s(r, th2, 1.0, 1.0);
  const double h = 1e-4;
  for (double t : {0.1, 0.5, 0.9})
    for (double y : {0.5, 1.0, 1.8}) {
      const double ut = (s.dual_value(t + h, y) - s.dual_value(t - h, y)) / (2 * h);
      const double uy = (s.dual_value(t, y + h) - s.dual_value(t, y - h)) / (2 * h);
      const double uyy = (s.dual_value(t, y + h) - 2 * s.dual_value(t, y) + s.dual_value(t, y - h)) / (h * h);
      CHECK(ut - r * y * uy + 0.5 * th2 * y * y * uyy == doctest::Approx(0.0).epsilon(1e-5).scale(1.0));
      CHECK(s.dual_dy(t, y) == doctest::Approx(uy).epsilon(1e-6));
      CHECK(s.dual_dyy(t, y) == doctest::Approx(uyy).epsilon(1e-5));
    }
  // conjugacy at the origin
  const auto& sol = s.solution();
  CHECK(sol.value == doctest::Approx(sol.dual_value + sol.y_hat).epsilon(1e-12));
}

TEST_CASE("Merton limits") {
  const auto c = diag2();
  const double th2 = std::pow(0.03 / 0.2, 2) + std::pow(0.02 / 0.3, 2);
  const auto unc = merton_cone_solution(c, 0.5, 1.0, 0.7, 200, MertonDualSet::Zero);
  CHECK(unc.sol.value == doctest::Approx(merton_closed(0.05, th2, 0.5, 1.0, 0.7)).epsilon(1e-12));
  const auto bond = merton_cone_solution(c, 0.5, 1.0, 0.7, 200, MertonDualSet::Free);
  CHECK(bond.sol.value == doctest::Approx(2.0 * std::exp(0.5 * 0.05 * 0.7)).epsilon(1e-10));
  // positive premia on a diagonal market: the no-short cone is inactive
  const auto cone = merton_cone_solution(c, 0.5, 1.0, 0.7, 200, MertonDualSet::Cone);
  CHECK(cone.sol.value == doctest::Approx(unc.sol.value).epsilon(1e-12));
  // a negative premium makes it bind
  Vector mu(2);
  mu << 0.08, 0.01;
  const auto bind = merton_cone_solution(MarketCoefficients::constant(0.05, mu, c.sigma(0)), 0.5,
                                         1.0, 0.7, 200, MertonDualSet::Cone);
  const double th2b = std::pow(0.03 / 0.2, 2);
  CHECK(bind.sol.value == doctest::Approx(merton_closed(0.05, th2b, 0.5, 1.0, 0.7)).epsilon(1e-8));
  CHECK_THROWS(merton_cone_solution(c, 0.5, 1.0, 0.7, 201));
}

TEST_CASE("Merton quadrature converges on time-varying coefficients") {
  const auto c = example2_market(5, 1);
  const double a = merton_cone_solution(c, 0.5, 1.0, 0.5, 200).sol.value;
  const double b = merton_cone_solution(c, 0.5, 1.0, 0.5, 400).sol.value;
  CHECK(std::abs(a - b) < 1e-8);
}

TEST_CASE("log utility on a ball") {
  const auto c = diag2();
  const double th2 = std::pow(0.03 / 0.2, 2) + std::pow(0.02 / 0.3, 2);
  const double free = 0.05 * 0.5 + 0.5 * th2 * 0.5;
  CHECK(log_ball_solution(c, 1e300, 1.0, 0.5).sol.value == doctest::Approx(free).epsilon(1e-12));
  // optimal proportions (0.75, 0.222) have norm below 1
  CHECK(log_ball_solution(c, 1.0, 1.0, 0.5).sol.value == doctest::Approx(free).epsilon(1e-10));
  // and a small ball costs utility
  CHECK(log_ball_solution(c, 0.1, 1.0, 0.5).sol.value < free - 1e-4);
  CHECK(log_ball_solution(c, 1.0, std::exp(1.0), 0.5).sol.value ==
        doctest::Approx(1.0 + free).epsilon(1e-12));
}

TEST_CASE("log utility on a binding ball matches a brute-force search") {
  const auto c = diag2();
  const double R = 0.3, T = 0.5;
  // max over |pi| <= R of r + pi.b - |sigma' pi|^2 / 2 on a polar grid
  double best = -1e300;
  for (int i = 0; i <= 400; ++i)
    for (int j = 0; j < 720; ++j) {
      const double rad = R * i / 400.0, ang = 2 * std::numbers::pi * j / 720.0;
      Vector pi(2);
      pi << rad * std::cos(ang), rad * std::sin(ang);
      const Vector b = c.mu(0) - Vector::Constant(2, 0.05);
      best = std::max(best, 0.05 + pi.dot(b) - 0.5 * (c.sigma(0).transpose() * pi).squaredNorm());
    }
  CHECK(log_ball_solution(c, R, 1.0, T).sol.value == doctest::Approx(best * T).epsilon(1e-5));
}

TEST_CASE("Heston Riccati pair") {
  HestonParams h;
  const auto rp = heston_riccati(h, 0.5, 1.0, 1000);
  CHECK(rp.C.back() == 0.0);
  CHECK(rp.D.back() == 0.0);
  CHECK(rp.t.front() == 0.0);
  double prev = 0.0;
  for (double T : {0.1, 0.2, 0.5, 1.0}) {
    const double v = heston_riccati_value(h, 0.5, 1.0, T);
    CHECK(v > prev);
    prev = v;
  }
  CHECK(heston_optimal_pi(h, 0.5, 0.0) == doctest::Approx(1.0));
  HestonParams bad = h;
  bad.xi = 0.0;
  CHECK_THROWS(heston_riccati(bad, 0.5, 1.0));
}

TEST_CASE("Heston value satisfies the HJB equation") {
  HestonParams h;
  const double p = 0.5, T = 0.5;
  const int steps = 2000;
  const auto rp = heston_riccati(h, p, T, steps);
  const double dt = T / steps, dx = 1e-3, dv = 1e-3;
  for (int i : {200, 1000, 1800})
    for (double x : {0.7, 1.3})
      for (double v : {0.1, 0.5}) {
        auto u = [&](int k, double xx, double vv) {
          return std::pow(xx, p) / p * std::exp(rp.C[k] + rp.D[k] * vv);
        };
        const double ut = (u(i + 1, x, v) - u(i - 1, x, v)) / (2 * dt);
        const double ux = (u(i, x + dx, v) - u(i, x - dx, v)) / (2 * dx);
        const double uxx = (u(i, x + dx, v) - 2 * u(i, x, v) + u(i, x - dx, v)) / (dx * dx);
        const double uv = (u(i, x, v + dv) - u(i, x, v - dv)) / (2 * dv);
        const double uvv = (u(i, x, v + dv) - 2 * u(i, x, v) + u(i, x, v - dv)) / (dv * dv);
        const double uxv = (u(i, x + dx, v + dv) - u(i, x + dx, v - dv) - u(i, x - dx, v + dv) +
                            u(i, x - dx, v - dv)) / (4 * dx * dv);
        // quadratic in pi: x(r + pi A v) ux + x^2 pi^2 v uxx / 2 + pi x rho xi v uxv
        const double a = 0.5 * x * x * v * uxx, b = x * h.A * v * ux + x * h.rho * h.xi * v * uxv;
        const double sup = x * h.r * ux - b * b / (4 * a);
        const double res = ut + sup + h.kappa * (h.long_run - v) * uv + 0.5 * h.xi * h.xi * v * uvv;
        CHECK(std::abs(res) < 1e-4 * u(i, x, v));
      }
}

TEST_CASE("Heston with frozen variance reduces to Merton") {
  HestonParams h;
  h.xi = 1e-9;
  h.long_run = h.v0;
  const double th2 = h.A * h.A * h.v0;
  CHECK(heston_riccati_value(h, 0.5, 1.0, 0.8) ==
        doctest::Approx(merton_closed(h.r, th2, 0.5, 1.0, 0.8)).epsilon(1e-9));
}

TEST_CASE("closed-form primal and dual processes satisfy the duality relations") {
  const NonHaraSolution s(0.05, 0.04, 1.0, 0.5);
  const double th = 0.2;
  std::vector<Matrix> X, V1, Z1, Y, V2, Z2;
  const IncrementGenerator g(21, false);
  const int N = 10;
  Matrix W = Matrix::Zero(64, 1);
  for (int i = 0; i <= N; ++i) {
    const double t = 0.5 * i / N;
    if (i > 0) W += std::sqrt(0.5 / N) * g.batch(0, 64, i - 1, 1);
    Matrix x(64, 1), v1(64, 1), z1(64, 1), y(64, 1), v2(64, 1), z2(64, 1);
    for (int k = 0; k < 64; ++k) {
      const double tw = th * W(k);
      y(k) = s.Y(t, tw);
      z2(k) = s.Z2(t, tw);
      v2(k) = s.V2(t, tw);
      x(k) = -z2(k);
      v1(k) = s.primal_value(t, x(k));
      z1(k) = s.primal_dx(t, x(k));
    }
    X.push_back(x);
    V1.push_back(v1);
    Z1.push_back(z1);
    Y.push_back(y);
    V2.push_back(v2);
    Z2.push_back(z2);
  }
  const DualityResiduals r = duality_relation_check(X, V1, Z1, Y, V2, Z2, 1.0);
  CHECK(r.max() < 1e-10);
  CHECK(Y[0](0) == doctest::Approx(s.solution().y_hat));
  CHECK(X[0](0) == doctest::Approx(1.0).epsilon(1e-12));
}
