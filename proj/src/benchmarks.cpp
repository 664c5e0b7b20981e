#include "deepsc/benchmarks.hpp"

#include <cmath>
#include <stdexcept>

namespace deepsc {

namespace {

// Composite Simpson on uniform samples f[0..n], n even.
double simpson(const std::vector<double>& f, double h) {
  const std::size_t n = f.size() - 1;
  if (n % 2) throw std::invalid_argument("Simpson needs an even number of intervals");
  double s = f.front() + f.back();
  for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f[i];
  return s * h / 3.0;
}

// Largest eigenvalue of S^{-T} S^{-1}: Lipschitz constant of the gradient.
double lipschitz(const Matrix& sinv) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sinv.transpose() * sinv);
  return es.eigenvalues().maxCoeff();
}

Vector min_cone(const Vector& theta, const Matrix& sinv) {
  // projected gradient on 1/2 |theta + S^{-1} v|^2, v >= 0
  const double step = 1.0 / lipschitz(sinv);
  Vector v = Vector::Zero(theta.size());
  for (int it = 0; it < 200000; ++it) {
    const Vector g = sinv.transpose() * (theta + sinv * v);
    const Vector next = (v - step * g).cwiseMax(0.0);
    const double moved = (next - v).lpNorm<Eigen::Infinity>();
    v = next;
    if (moved < 1e-15) break;
  }
  return v;
}

Vector min_ball(const Vector& theta, const Matrix& sinv, double R) {
  // FISTA with the group shrinkage prox of R|v|
  const double step = 1.0 / lipschitz(sinv);
  Vector v = Vector::Zero(theta.size()), w = v;
  double tk = 1.0;
  for (int it = 0; it < 200000; ++it) {
    const Vector g = sinv.transpose() * (theta + sinv * w);
    Vector u = w - step * g;
    const double nu = u.norm();
    const Vector next = nu > step * R ? Vector(u * (1.0 - step * R / nu)) : Vector::Zero(u.size());
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    w = next + ((tk - 1.0) / tn) * (next - v);
    const double moved = (next - v).lpNorm<Eigen::Infinity>();
    v = next;
    tk = tn;
    if (moved < 1e-15 && it > 10) break;
  }
  return v;
}

}  // namespace

nlohmann::json ClosedFormSolution::to_json() const {
  return {{"value", value}, {"dual_value", dual_value}, {"y_hat", y_hat}, {"source", source}};
}

// ---------------------------------------------------------------------------

NonHaraSolution::NonHaraSolution(double r, double theta_sq, double x0, double T)
    : r_(r), th2_(theta_sq), x0_(x0), T_(T) {
  if (!(x0 > 0.0)) throw std::domain_error("x0 must be positive");
  const double a = std::exp(3.0 * (r + 2.0 * theta_sq) * T);
  const double b = std::exp((r + theta_sq) * T);
  sol_.y_hat = std::sqrt(b + std::sqrt(b * b + 4.0 * x0 * a)) / std::sqrt(2.0 * x0);
  sol_.dual_value = dual_value(0.0, sol_.y_hat);
  sol_.value = sol_.dual_value + x0 * sol_.y_hat;
  sol_.source = "non-HARA closed form";
}

double NonHaraSolution::dual_value(double t, double y) const {
  const double s = T_ - t;
  return std::pow(y, -3.0) / 3.0 * std::exp((3.0 * r_ + 6.0 * th2_) * s) +
         std::exp((r_ + th2_) * s) / y;
}

double NonHaraSolution::dual_dy(double t, double y) const {
  const double s = T_ - t;
  return -std::pow(y, -4.0) * std::exp((3.0 * r_ + 6.0 * th2_) * s) -
         std::pow(y, -2.0) * std::exp((r_ + th2_) * s);
}

double NonHaraSolution::dual_dyy(double t, double y) const {
  const double s = T_ - t;
  return 4.0 * std::pow(y, -5.0) * std::exp((3.0 * r_ + 6.0 * th2_) * s) +
         2.0 * std::pow(y, -3.0) * std::exp((r_ + th2_) * s);
}

double NonHaraSolution::primal_dx(double t, double x) const {
  if (!(x > 0.0)) throw std::domain_error("primal value needs x > 0");
  // -u~_y(t, .) is decreasing; bisect on log y, then polish with Newton
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (-dual_dy(t, std::exp(mid)) > x) lo = mid;
    else hi = mid;
  }
  double y = std::exp(0.5 * (lo + hi));
  for (int i = 0; i < 3; ++i) y -= (-dual_dy(t, y) - x) / (-dual_dyy(t, y));
  return y;
}

double NonHaraSolution::primal_value(double t, double x) const {
  const double y = primal_dx(t, x);
  return dual_value(t, y) + x * y;
}

double NonHaraSolution::Y(double t, double theta_W) const {
  return sol_.y_hat * std::exp(-(r_ + 0.5 * th2_) * t - theta_W);
}

double NonHaraSolution::Z2(double t, double theta_W) const {
  return dual_dy(t, Y(t, theta_W));
}

NonHaraSolution nonhara_value(const MarketCoefficients& c, double x0, double T) {
  const double r = c.r(0.0);
  const Vector th = c.theta(0.0);
  for (double t : {0.5 * T, T})
    if (std::abs(c.r(t) - r) > 1e-14 || (c.theta(t) - th).norm() > 1e-12)
      throw std::invalid_argument("non-HARA closed form needs constant coefficients");
  return NonHaraSolution(r, th.squaredNorm(), x0, T);
}

// ---------------------------------------------------------------------------

MertonConeSolution merton_cone_solution(const MarketCoefficients& c, double p, double x0,
                                        double T, int grid, MertonDualSet set) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("power exponent must lie in (0,1)");
  if (grid < 2 || grid % 2) throw std::invalid_argument("grid must be even and >= 2");
  MertonConeSolution out;
  const double h = T / grid;
  std::vector<double> f(grid + 1);
  for (int i = 0; i <= grid; ++i) {
    const double t = h * i;
    const Vector th = c.theta(t);
    const Matrix sinv = c.sigma(t).inverse();
    Vector v;
    switch (set) {
      case MertonDualSet::Zero: v = Vector::Zero(c.m); break;
      case MertonDualSet::Cone: v = min_cone(th, sinv); break;
      case MertonDualSet::Free: v = -c.sigma(t) * th; break;
    }
    const double th2 = (th + sinv * v).squaredNorm();
    out.t.push_back(t);
    out.v_hat.push_back(v);
    out.theta_hat_sq.push_back(th2);
    f[i] = p / (2.0 * (p - 1.0) * (p - 1.0)) * th2 - p / (p - 1.0) * c.r(t);
  }
  const double I = simpson(f, h);
  const double y = std::pow(x0, p - 1.0) * std::exp((1.0 - p) * I);
  const double Ut = (1.0 - p) / p * std::pow(y, p / (p - 1.0));
  out.sol.y_hat = y;
  out.sol.dual_value = Ut * std::exp(I);
  out.sol.value = out.sol.dual_value + x0 * y;
  out.sol.source = "power utility, deterministic coefficients";
  return out;
}

MertonConeSolution log_ball_solution(const MarketCoefficients& c, double R, double x0,
                                     double T, int grid) {
  if (!(R > 0.0)) throw std::invalid_argument("ball radius must be positive");
  if (!(x0 > 0.0)) throw std::domain_error("x0 must be positive");
  if (grid < 2 || grid % 2) throw std::invalid_argument("grid must be even and >= 2");
  MertonConeSolution out;
  const double h = T / grid;
  std::vector<double> f(grid + 1);
  for (int i = 0; i <= grid; ++i) {
    const double t = h * i;
    const Vector th = c.theta(t);
    const Matrix sinv = c.sigma(t).inverse();
    const Vector v = min_ball(th, sinv, R);
    const double th2 = (th + sinv * v).squaredNorm();
    out.t.push_back(t);
    out.v_hat.push_back(v);
    out.theta_hat_sq.push_back(th2);
    f[i] = c.r(t) + R * v.norm() + 0.5 * th2;
  }
  const double I = simpson(f, h);
  out.sol.y_hat = 1.0 / x0;
  out.sol.value = std::log(x0) + I;
  out.sol.dual_value = out.sol.value - 1.0;  // u~(0, 1/x0) = u - x0 y
  out.sol.source = "log utility, ball constraint";
  return out;
}

// ---------------------------------------------------------------------------

RiccatiPair heston_riccati(const HestonParams& h, double p, double T, int steps) {
  h.validate();
  if (steps < 1) throw std::invalid_argument("need at least one step");
  auto rhs = [&](double D, double& dC, double& dD) {
    const double q = h.A + h.rho * h.xi * D;
    dC = -(h.kappa * h.long_run * D + p * h.r);
    dD = -(p * q * q / (2.0 * (1.0 - p)) - h.kappa * D + 0.5 * h.xi * h.xi * D * D);
  };
  RiccatiPair out;
  out.t.resize(steps + 1);
  out.C.resize(steps + 1);
  out.D.resize(steps + 1);
  const double dt = T / steps;
  double C = 0.0, D = 0.0;
  out.t[steps] = T;
  out.C[steps] = 0.0;
  out.D[steps] = 0.0;
  for (int i = steps; i > 0; --i) {
    // integrate backwards: y(t - dt) = y(t) - dt y'
    double c1, d1, c2, d2, c3, d3, c4, d4;
    rhs(D, c1, d1);
    rhs(D - 0.5 * dt * d1, c2, d2);
    rhs(D - 0.5 * dt * d2, c3, d3);
    rhs(D - dt * d3, c4, d4);
    C -= dt / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4);
    D -= dt / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4);
    if (!std::isfinite(C) || !std::isfinite(D) || std::abs(D) > 1e12)
      throw std::runtime_error("Riccati solution blew up before t = 0");
    out.t[i - 1] = dt * (i - 1);
    out.C[i - 1] = C;
    out.D[i - 1] = D;
  }
  return out;
}

double heston_riccati_value(const HestonParams& h, double p, double x0, double T, int steps) {
  const RiccatiPair rp = heston_riccati(h, p, T, steps);
  return std::pow(x0, p) / p * std::exp(rp.C[0] + rp.D[0] * h.v0);
}

double heston_optimal_pi(const HestonParams& h, double p, double D) {
  return (h.A + h.rho * h.xi * D) / (1.0 - p);
}

// ---------------------------------------------------------------------------

DualityResiduals duality_relation_check(const std::vector<Matrix>& X,
                                        const std::vector<Matrix>& V1,
                                        const std::vector<Matrix>& Z1,
                                        const std::vector<Matrix>& Y,
                                        const std::vector<Matrix>& V2,
                                        const std::vector<Matrix>& Z2, double x0) {
  const std::size_t n = X.size();
  if (V1.size() != n || Z1.size() != n || Y.size() != n || V2.size() != n || Z2.size() != n)
    throw std::invalid_argument("duality check: path lengths differ");
  DualityResiduals r;
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index s = 0; s < X[i].rows(); ++s) {
      r.x = std::max(r.x, std::abs(X[i](s, 0) + Z2[i](s, 0)) / x0);
      const double v1 = V1[i](s, 0);
      r.v = std::max(r.v, std::abs(v1 - (V2[i](s, 0) - Z2[i](s, 0) * Y[i](s, 0))) / std::abs(v1));
      r.z = std::max(r.z, std::abs(Z1[i](s, 0) - Y[i](s, 0)) / std::abs(Y[i](s, 0)));
    }
  return r;
}

}  // namespace deepsc
