#include "deepsc/sde.hpp"

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace deepsc;

TEST_CASE("increments are a pure function of their key") {
  const IncrementGenerator g(42);
  const Matrix a = g.batch(10, 6, 3, 2);
  const Matrix b = g.batch(10, 6, 3, 2);
  CHECK(a == b);
  // batches can be generated in any order and split arbitrarily
  CHECK(g.batch(12, 2, 3, 2) == a.middleRows(2, 2));
  CHECK(IncrementGenerator(43).batch(10, 6, 3, 2) != a);
  CHECK_THROWS(IncrementGenerator(1, true, 0));
}

TEST_CASE("antithetic pairs negate") {
  const IncrementGenerator g(7, true);
  const Matrix a = g.batch(0, 8, 0, 3);
  for (int p = 0; p < 8; p += 2) CHECK(a.row(p + 1) == -a.row(p));
  const IncrementGenerator plain(7, false);
  const Matrix b = plain.batch(0, 8, 0, 3);
  CHECK(b.row(1) != -b.row(0));
}

TEST_CASE("substeps aggregate the fine grid") {
  const IncrementGenerator fine(5, true, 1), coarse(5, true, 4);
  const Matrix c = coarse.batch(0, 4, 1, 2);
  Matrix s = Matrix::Zero(4, 2);
  for (int j = 4; j < 8; ++j) s += fine.batch(0, 4, j, 2);
  CHECK((c - s / 2.0).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("standard normal moments") {
  const IncrementGenerator g(11, false);
  const Matrix z = g.batch(0, 200000, 0, 1);
  const double mean = z.mean();
  const double var = (z.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);
  CHECK(std::abs((z.array() > 1.96).cast<double>().mean() - 0.025) < 0.002);
}

TEST_CASE("euler step") {
  Matrix x(2, 1), b(2, 1), s(2, 2), dw(2, 2);
  x << 1, 2;
  b << 0.5, -1;
  s << 1, 2, 0, 1;
  dw << 1, 1, 2, -1;
  const Matrix n = euler_step(x, b, s, 0.25, dw);
  CHECK(n(0, 0) == doctest::Approx(1 + 0.125 + 0.5 * 3));
  CHECK(n(1, 0) == doctest::Approx(2 - 0.25 + 0.5 * -1));
  CHECK_THROWS(euler_step(x, b, s, 0.25, Matrix::Zero(2, 3)));
  const Vector one = Vector::Ones(1);
  const Vector v = euler_step(one, one, Matrix(Matrix::Ones(1, 1)), 1.0, one);
  CHECK(v(0) == doctest::Approx(3.0));
}

TEST_CASE("example markets") {
  const Matrix s = example1_sigma(5, 3);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double base = s(i, j) - (i == j ? 0.2 : 0.0);
      CHECK(base >= 0.0);
      CHECK(base <= 0.2);
    }
  CHECK(example1_sigma(5, 3) == s);
  const auto m1 = example1_market(5, 3);
  CHECK(m1.b(0.1)(0) == doctest::Approx(0.01));
  CHECK((m1.sigma(0.3) * m1.theta(0.3) - m1.b(0.3)).norm() < 1e-14);
  m1.validate(0.5);

  const auto m2 = example2_market(4, 1);
  const Vector a = random_phases(4, 1);
  CHECK(m2.mu(0.2)(1) == doctest::Approx(0.04 + std::sin(std::numbers::pi * 0.2 + a(1)) / 50));
  CHECK(m2.sigma(0)(0, 0) == 0.4);
  CHECK(m2.sigma(0)(0, 1) == 0.2);

  const auto m3 = example3_market(3, 2);
  const Vector a3 = random_phases(3, 2);
  CHECK(m3.sigma(0.1)(2, 2) ==
        doctest::Approx((4 + 2 * std::sin(2 * std::numbers::pi * 0.1 + a3(2))) / 10));
  CHECK(m3.sigma(0.1)(0, 1) == 0.0);

  auto bad = MarketCoefficients::constant(0.0, Vector::Ones(2), Matrix::Zero(2, 2));
  CHECK_THROWS(bad.validate(1.0));
}

TEST_CASE("wealth and dual dynamics") {
  const auto c = MarketCoefficients::constant(0.05, Vector::Constant(1, 0.06),
                                              Matrix::Constant(1, 1, 0.2));
  Vector pi(1);
  pi << 0.5;
  const Dynamics w = wealth_dynamics(c, 0.0, 2.0, pi);
  CHECK(w.drift(0) == doctest::Approx(2.0 * (0.05 + 0.5 * 0.01)));
  CHECK(w.diffusion(0, 0) == doctest::Approx(2.0 * 0.5 * 0.2));

  const ConstraintSet cone = ConstraintSet::cone(1);
  Vector v(1);
  v << 0.1;
  const Dynamics d = dual_dynamics(c, cone, 0.0, 3.0, v);
  CHECK(d.drift(0) == doctest::Approx(-3.0 * 0.05));
  CHECK(d.diffusion(0, 0) == doctest::Approx(-3.0 * (0.05 + 0.1 / 0.2)));
  v << -0.1;
  CHECK_THROWS_AS(dual_dynamics(c, cone, 0.0, 3.0, v), std::domain_error);
}

TEST_CASE("Heston dynamics truncate negative variance") {
  HestonParams h;
  const Dynamics d = heston_dynamics(h, 0.0, 1.0, -0.2, 0.7, false);
  CHECK(d.diffusion(0, 0) == 0.0);
  CHECK(d.drift(1) == doctest::Approx(h.kappa * h.long_run));
  const Dynamics e = heston_dynamics(h, 0.0, 1.0, 0.25, 0.0, true);
  CHECK(e.diffusion(0, 0) == doctest::Approx(-h.A * 0.5));
  HestonParams bad;
  bad.rho = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("running-maximum volatility regime") {
  PathDepVolParams p;
  Vector mx(2), cur(2);
  mx << 1.2, 1.0;
  cur << 1.1, 1.0;
  const Vector s = pathdep_sigma(p, mx, cur);
  CHECK(s(0) == p.sigma_low);
  CHECK(s(1) == p.sigma_high);
  PathDepVolParams bad;
  bad.sigma_low = 0.1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("path csv") {
  const auto path = std::filesystem::temp_directory_path() / "deepsc_paths.csv";
  write_paths_csv(path.string(), {1.0, 2}, {Matrix::Zero(3, 1), Matrix::Ones(3, 1), Matrix::Ones(3, 1)});
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "path,t,x0");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 9);
  std::filesystem::remove(path);
}

TEST_CASE("seed mixing") {
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  CHECK(splitmix64(0) != 0);
}
