#pragma once

// Market models, Euler-Maruyama primitives and reproducible Gaussian
// increments.

#include "deepsc/constraints.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace deepsc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Counter-based standard normals: the value for (seed, path, step, component)
// is a pure function of its key, so batches can be generated in any order.
class IncrementGenerator {
 public:
  explicit IncrementGenerator(std::uint64_t seed, bool antithetic = true,
                              int substeps = 1);

  std::uint64_t seed() const { return seed_; }
  bool antithetic() const { return antithetic_; }
  int substeps() const { return substeps_; }

  // Standard normal on the fine grid. With antithetic pairing, path 2j+1 is
  // the negation of path 2j.
  double normal(std::uint64_t path, std::uint64_t step, std::uint64_t comp) const;

  // Standard normals for paths [first_path, first_path + k) at coarse step i:
  // the sum of `substeps` fine normals divided by sqrt(substeps), so grids
  // sharing a fine grid see the same Brownian path.
  Matrix batch(std::uint64_t first_path, Eigen::Index k, int step, int dim) const;

  // All N steps for a batch, one k x dim matrix per step.
  std::vector<Matrix> path_batch(std::uint64_t first_path, Eigen::Index k, int steps,
                                 int dim) const;

 private:
  std::uint64_t seed_;
  bool antithetic_;
  int substeps_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct TimeGrid {
  double T = 1.0;
  int N = 10;
  double dt() const { return T / N; }
  double t(int i) const { return T * i / N; }
};

// Deterministic Black-Scholes coefficients on [0, T].
struct MarketCoefficients {
  int m = 1;
  std::function<double(double)> r;
  std::function<Vector(double)> mu;
  std::function<Matrix(double)> sigma;
  std::string description;

  Vector b(double t) const { return mu(t) - r(t) * Vector::Ones(m); }
  Vector theta(double t) const { return sigma(t).lu().solve(b(t)); }
  // Evaluates sigma(t) and verifies it is invertible and finite.
  void validate(double T, int samples = 11) const;

  static MarketCoefficients constant(double r, Vector mu, Matrix sigma);
};

// m x m matrix with U(0, 0.2) entries and 0.2 added on the diagonal.
Matrix example1_sigma(int m, std::uint64_t seed);
// m phases uniform on (0, 2 pi)
Vector random_phases(int m, std::uint64_t seed);

MarketCoefficients example1_market(int m, std::uint64_t seed, double r = 0.05,
                                   double mu = 0.06);
// mu_i(t) = 0.04 + sin(pi t + A_i)/50, sigma 0.4 diagonal / 0.2 elsewhere
MarketCoefficients example2_market(int m, std::uint64_t seed, double r = 0.05);
// diagonal sigma_i(t) = (4 + 2 sin(2 pi t + A_i))/10, constant mu
MarketCoefficients example3_market(int m, std::uint64_t seed, double r = 0.05,
                                   double mu = 0.07);

struct HestonParams {
  double r = 0.05;
  double A = 0.5;
  double kappa = 1.0;
  double long_run = 0.05;
  double xi = 0.5;
  double rho = -0.5;
  double v0 = 0.5;

  void validate() const;
};

struct PathDepVolParams {
  double sigma_low = 0.3;
  double sigma_high = 0.2;
  int m = 2;
  double r = 0.05;
  double mu = 0.06;

  void validate() const;
};

struct Dynamics {
  Vector drift;
  Matrix diffusion;
};

// next = state + dt drift + sqrt(dt) diffusion dW, row-wise over a batch.
// state k x d, drift k x d, diffusion k x (d n) row-major, dW k x n.
Matrix euler_step(const Matrix& state, const Matrix& drift,
                  const Matrix& diffusion, double dt, const Matrix& dW);
// Single-sample form.
Vector euler_step(const Vector& state, const Vector& drift, const Matrix& diffusion,
                  double dt, const Vector& dW);

// drift x (r + pi.b), diffusion row x pi' sigma
Dynamics wealth_dynamics(const MarketCoefficients& c, double t, double x,
                         const Vector& pi);
// drift -y (r + delta_K(v)), diffusion row -y (theta + sigma^{-1} v)'
Dynamics dual_dynamics(const MarketCoefficients& c, const ConstraintSet& set,
                       double t, double y, const Vector& v);

// Two-dimensional Heston state (wealth or dual, variance) with noise
// (W^s, W^perp). Primal control is pi; dual control is gamma (eta = 0).
Dynamics heston_dynamics(const HestonParams& h, double t, double x, double v,
                         double control, bool dual);

// sigma_high on stocks at their running maximum (relative tolerance 1e-12),
// sigma_low otherwise.
Vector pathdep_sigma(const PathDepVolParams& p, const Vector& running_max,
                     const Vector& current);

// Writes one row per (path, step): path, t, state components.
void write_paths_csv(const std::string& path, const TimeGrid& grid,
                     const std::vector<Matrix>& states);

}  // namespace deepsc
