#include "deepsc/sde.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace deepsc {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

IncrementGenerator::IncrementGenerator(std::uint64_t seed, bool antithetic,
                                       int substeps)
    : seed_(seed), antithetic_(antithetic), substeps_(substeps) {
  if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
}

namespace {
// uniform in (0, 1]
double to_unit(std::uint64_t h) {
  return (static_cast<double>(h >> 11) + 1.0) * (1.0 / 9007199254740992.0);
}
}  // namespace

double IncrementGenerator::normal(std::uint64_t path, std::uint64_t step,
                                  std::uint64_t comp) const {
  double sign = 1.0;
  if (antithetic_) {
    if (path & 1ULL) sign = -1.0;
    path >>= 1;
  }
  std::uint64_t h = splitmix64(seed_ ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ path);
  h = splitmix64(h ^ (step * 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ (comp * 0xc2b2ae3d27d4eb4fULL));
  const double u1 = to_unit(h);
  const double u2 = to_unit(splitmix64(h ^ 0xa0761d6478bd642fULL));
  return sign * std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

Matrix IncrementGenerator::batch(std::uint64_t first_path, Eigen::Index k,
                                 int step, int dim) const {
  Matrix out(k, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(substeps_));
  for (Eigen::Index p = 0; p < k; ++p) {
    const std::uint64_t path = first_path + static_cast<std::uint64_t>(p);
    for (int c = 0; c < dim; ++c) {
      double s = 0.0;
      for (int j = 0; j < substeps_; ++j)
        s += normal(path, static_cast<std::uint64_t>(step) * substeps_ + j, c);
      out(p, c) = substeps_ == 1 ? s : s * scale;
    }
  }
  return out;
}

std::vector<Matrix> IncrementGenerator::path_batch(std::uint64_t first_path,
                                                   Eigen::Index k, int steps,
                                                   int dim) const {
  std::vector<Matrix> out;
  out.reserve(steps);
  for (int i = 0; i < steps; ++i) out.push_back(batch(first_path, k, i, dim));
  return out;
}

void MarketCoefficients::validate(double T, int samples) const {
  if (!r || !mu || !sigma) throw std::invalid_argument("market coefficients incomplete");
  for (int i = 0; i < samples; ++i) {
    const double t = T * i / std::max(1, samples - 1);
    const Matrix s = sigma(t);
    if (s.rows() != m || s.cols() != m || mu(t).size() != m)
      throw std::invalid_argument("market coefficient shapes inconsistent");
    if (!s.allFinite() || !mu(t).allFinite() || !std::isfinite(r(t)))
      throw std::invalid_argument("market coefficients not finite");
    Eigen::FullPivLU<Matrix> lu(s);
    if (!lu.isInvertible()) throw std::invalid_argument("volatility matrix singular");
  }
}

MarketCoefficients MarketCoefficients::constant(double r, Vector mu, Matrix sigma) {
  MarketCoefficients c;
  c.m = static_cast<int>(mu.size());
  c.r = [r](double) { return r; };
  c.mu = [mu](double) { return mu; };
  c.sigma = [sigma](double) { return sigma; };
  c.description = "constant";
  return c;
}

Matrix example1_sigma(int m, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  Matrix s(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) s(i, j) = u(gen);
  s.diagonal().array() += 0.2;
  return s;
}

Vector random_phases(int m, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  Vector a(m);
  for (int i = 0; i < m; ++i) a(i) = u(gen);
  return a;
}

MarketCoefficients example1_market(int m, std::uint64_t seed, double r, double mu) {
  auto c = MarketCoefficients::constant(r, Vector::Constant(m, mu),
                                        example1_sigma(m, seed));
  c.description = "example1";
  return c;
}

MarketCoefficients example2_market(int m, std::uint64_t seed, double r) {
  const Vector a = random_phases(m, seed);
  Matrix s = Matrix::Constant(m, m, 0.2);
  s.diagonal().setConstant(0.4);
  MarketCoefficients c;
  c.m = m;
  c.r = [r](double) { return r; };
  c.mu = [a](double t) {
    return Vector((std::numbers::pi * t + a.array()).sin() / 50.0 + 0.04);
  };
  c.sigma = [s](double) { return s; };
  c.description = "example2";
  return c;
}

MarketCoefficients example3_market(int m, std::uint64_t seed, double r, double mu) {
  const Vector a = random_phases(m, seed);
  MarketCoefficients c;
  c.m = m;
  c.r = [r](double) { return r; };
  c.mu = [m, mu](double) { return Vector::Constant(m, mu); };
  c.sigma = [a](double t) {
    const Vector d = (4.0 + 2.0 * (2.0 * std::numbers::pi * t + a.array()).sin()) / 10.0;
    return Matrix(d.asDiagonal());
  };
  c.description = "example3";
  return c;
}

void HestonParams::validate() const {
  if (!(kappa > 0 && long_run > 0 && xi > 0 && v0 > 0))
    throw std::invalid_argument("Heston kappa, long-run variance, xi, v0 must be positive");
  if (std::abs(rho) > 1.0) throw std::invalid_argument("Heston correlation outside [-1,1]");
}

void PathDepVolParams::validate() const {
  if (!(sigma_low > sigma_high && sigma_high > 0))
    throw std::invalid_argument("need sigma_low > sigma_high > 0");
  if (m < 1) throw std::invalid_argument("need at least one stock");
}

Matrix euler_step(const Matrix& state, const Matrix& drift, const Matrix& diffusion,
                  double dt, const Matrix& dW) {
  const Eigen::Index k = state.rows(), d = state.cols(), n = dW.cols();
  if (drift.rows() != k || drift.cols() != d || diffusion.rows() != k ||
      diffusion.cols() != d * n || dW.rows() != k)
    throw std::invalid_argument("euler_step: shape mismatch");
  Matrix next = state + dt * drift;
  const double sq = std::sqrt(dt);
  for (Eigen::Index s = 0; s < k; ++s)
    for (Eigen::Index l = 0; l < d; ++l) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) acc += diffusion(s, l * n + c) * dW(s, c);
      next(s, l) += sq * acc;
    }
  return next;
}

Vector euler_step(const Vector& state, const Vector& drift, const Matrix& diffusion,
                  double dt, const Vector& dW) {
  if (drift.size() != state.size() || diffusion.rows() != state.size() ||
      diffusion.cols() != dW.size())
    throw std::invalid_argument("euler_step: shape mismatch");
  return state + dt * drift + std::sqrt(dt) * diffusion * dW;
}

Dynamics wealth_dynamics(const MarketCoefficients& c, double t, double x,
                         const Vector& pi) {
  if (pi.size() != c.m) throw std::invalid_argument("control dimension mismatch");
  Dynamics d;
  d.drift = Vector::Constant(1, x * (c.r(t) + pi.dot(c.b(t))));
  d.diffusion = x * (pi.transpose() * c.sigma(t));
  return d;
}

Dynamics dual_dynamics(const MarketCoefficients& c, const ConstraintSet& set,
                       double t, double y, const Vector& v) {
  const double delta = support(set, v);
  if (!std::isfinite(delta))
    throw std::domain_error("dual control has infinite support value");
  Dynamics d;
  d.drift = Vector::Constant(1, -y * (c.r(t) + delta));
  const Matrix s = c.sigma(t);
  const Vector dir = c.theta(t) + s.lu().solve(v);
  d.diffusion = -y * dir.transpose();
  return d;
}

Dynamics heston_dynamics(const HestonParams& h, double, double x, double v,
                         double control, bool dual) {
  const double vp = std::max(v, 0.0);
  const double sv = std::sqrt(vp);
  const double rr = std::sqrt(1.0 - h.rho * h.rho);
  Dynamics d;
  d.drift.resize(2);
  d.diffusion.resize(2, 2);
  if (!dual) {
    d.drift(0) = x * (h.r + control * h.A * vp);
    d.diffusion(0, 0) = x * control * sv;
    d.diffusion(0, 1) = 0.0;
  } else {
    d.drift(0) = -x * h.r;
    d.diffusion(0, 0) = -x * h.A * sv;
    d.diffusion(0, 1) = rr * x * control;
  }
  d.drift(1) = h.kappa * (h.long_run - vp);
  d.diffusion(1, 0) = h.rho * h.xi * sv;
  d.diffusion(1, 1) = rr * h.xi * sv;
  return d;
}

Vector pathdep_sigma(const PathDepVolParams& p, const Vector& running_max,
                     const Vector& current) {
  if (running_max.size() != current.size())
    throw std::invalid_argument("pathdep_sigma: size mismatch");
  Vector s(current.size());
  for (Eigen::Index i = 0; i < current.size(); ++i) {
    const bool at_max = current(i) >= running_max(i) * (1.0 - 1e-12);
    s(i) = at_max ? p.sigma_high : p.sigma_low;
  }
  return s;
}

void write_paths_csv(const std::string& path, const TimeGrid& grid,
                     const std::vector<Matrix>& states) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  if (states.empty()) return;
  os << "path,t";
  for (Eigen::Index c = 0; c < states[0].cols(); ++c) os << ",x" << c;
  os << "\n";
  os.precision(17);
  for (Eigen::Index p = 0; p < states[0].rows(); ++p)
    for (std::size_t i = 0; i < states.size(); ++i) {
      os << p << "," << grid.t(static_cast<int>(i));
      for (Eigen::Index c = 0; c < states[i].cols(); ++c) os << "," << states[i](p, c);
      os << "\n";
    }
}

}  // namespace deepsc
