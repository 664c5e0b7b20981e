#include "deepsc/control_problem.hpp"

#include <cmath>
#include <stdexcept>

namespace deepsc {

namespace {

// Per-row product of flattened (n x p) and (p x q) matrices.
Matrix batched_product(const Matrix& a, const Matrix& b, int n, int p, int q) {
  const Eigen::Index k = a.rows();
  const bool shared = b.rows() == 1 && k != 1;
  Matrix out = Matrix::Zero(k, static_cast<Eigen::Index>(n) * q);
  for (Eigen::Index s = 0; s < k; ++s) {
    const Eigen::Index sb = shared ? 0 : s;
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < p; ++l) {
        const double ail = a(s, i * p + l);
        if (ail == 0.0) continue;
        for (int j = 0; j < q; ++j) out(s, i * q + j) += ail * b(sb, l * q + j);
      }
  }
  return out;
}

Matrix gain_matrix(const UtilitySpec& u, const Matrix& x, bool dual) {
  Matrix g(x.rows(), 1);
  for (Eigen::Index s = 0; s < x.rows(); ++s)
    g(s, 0) = dual ? dual_eval(u, x(s, 0)).value : terminal_gain(u, x(s, 0));
  return g;
}

Matrix gain_grad_matrix(const UtilitySpec& u, const Matrix& x, bool dual) {
  Matrix g = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index s = 0; s < x.rows(); ++s)
    g(s, 0) = dual ? dual_eval(u, x(s, 0)).d1 : terminal_gain_grad(u, x(s, 0));
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// ControlProblem

void ControlProblem::jacobians(double t, const Matrix& x, const Matrix& pi,
                               Matrix& jb, Matrix& jsigma) const {
  const int d = state_dim(), n = noise_dim();
  const Eigen::Index k = x.rows();
  ad::Tape tape;
  ad::Var xv = tape.constant(x);
  ad::Var pv = tape.constant(pi);
  ad::Var b = drift(tape, t, xv, pv);
  ad::Var s = diffusion(tape, t, xv, pv);
  jb.resize(k, d * d);
  jsigma.resize(k, static_cast<Eigen::Index>(d) * n * d);
  const std::vector<ad::Var> wrt{xv};
  const double kk = static_cast<double>(k);
  for (int l = 0; l < d; ++l) {
    ad::Var root = tape.mean(tape.slice(b, l, 1));
    const Matrix g = tape.gradient(root, wrt)[0] * kk;
    for (int j = 0; j < d; ++j) jb.col(l * d + j) = g.col(j);
  }
  for (int c = 0; c < d * n; ++c) {
    ad::Var root = tape.mean(tape.slice(s, c, 1));
    const Matrix g = tape.gradient(root, wrt)[0] * kk;
    for (int j = 0; j < d; ++j) jsigma.col(c * d + j) = g.col(j);
  }
}

Matrix ControlProblem::drift_value(double t, const Matrix& x, const Matrix& pi) const {
  ad::Tape tape;
  return drift(tape, t, tape.constant(x), tape.constant(pi)).value();
}

Matrix ControlProblem::diffusion_value(double t, const Matrix& x,
                                       const Matrix& pi) const {
  ad::Tape tape;
  return diffusion(tape, t, tape.constant(x), tape.constant(pi)).value();
}

Matrix ControlProblem::control_value(const Matrix& raw) const {
  ad::Tape tape;
  return control_from_raw(tape, tape.constant(raw)).value();
}

Matrix ControlProblem::step_state(const Matrix& x, const Matrix& drift,
                                  const Matrix& diffusion, double dt,
                                  const Matrix& dW) const {
  Matrix next = euler_step(x, drift, diffusion, dt, dW);
  const auto logc = log_coordinates();
  const Eigen::Index n = dW.cols();
  const double sq = std::sqrt(dt);
  for (std::size_t l = 0; l < logc.size(); ++l) {
    if (!logc[l]) continue;
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
      const double xl = x(s, l);
      if (!(xl > 0.0)) throw std::domain_error("log-space coordinate left (0, inf)");
      double var = 0.0, noise = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) {
        const double sc = diffusion(s, l * n + c) / xl;
        var += sc * sc;
        noise += sc * dW(s, c);
      }
      next(s, l) = xl * std::exp((drift(s, l) / xl - 0.5 * var) * dt + sq * noise);
    }
  }
  return next;
}

ad::Var hamiltonian_F(ad::Tape& tape, const ControlProblem& problem, double t,
                      ad::Var x, ad::Var pi, ad::Var z, ad::Var gamma) {
  const int d = problem.state_dim(), n = problem.noise_dim();
  ad::Var b = problem.drift(tape, t, x, pi);
  ad::Var s = problem.diffusion(tape, t, x, pi);
  ad::Var q = tape.batched_matmul(gamma, s, d, d, n);
  ad::Var f = tape.add(tape.sum_cols(tape.mul(b, z)),
                       tape.scale(tape.sum_cols(tape.mul(s, q)), 0.5));
  ad::Var run = problem.running_gain(tape, t, x, pi);
  if (run.valid()) f = tape.add(f, run);
  return f;
}

Matrix hamiltonian_H_grad(const ControlProblem& problem, double t, const Matrix& x,
                          const Matrix& pi, const Matrix& z, const Matrix& q) {
  const int d = problem.state_dim(), n = problem.noise_dim();
  if (z.cols() != d || q.cols() != d * n)
    throw std::invalid_argument("hamiltonian_H_grad: shape mismatch");
  Matrix jb, js;
  problem.jacobians(t, x, pi, jb, js);
  return batched_product(z, jb, 1, d, d) + batched_product(q, js, 1, d * n, d);
}

bool hamiltonian_degenerate(const ControlProblem& problem, double t, const Matrix& x,
                            const Matrix& z, const Matrix& gamma) {
  const int m = problem.control_dim();
  const Eigen::Index k = x.rows();
  auto eval = [&](double lambda) {
    ad::Tape tape;
    Matrix pi = Matrix::Constant(k, m, lambda);
    return hamiltonian_F(tape, problem, t, tape.constant(x), tape.constant(pi),
                         tape.constant(z), tape.constant(gamma))
        .value();
  };
  const Matrix f0 = eval(0.0), f1 = eval(1.0), f2 = eval(2.0);
  for (Eigen::Index s = 0; s < k; ++s) {
    const double slope = f1(s, 0) - f0(s, 0);
    const double curv = f2(s, 0) - 2.0 * f1(s, 0) + f0(s, 0);
    const double scale = std::abs(f0(s, 0)) + std::abs(f1(s, 0)) + 1e-300;
    if (std::abs(curv) <= 1e-12 * scale && std::abs(slope) > 1e-12 * scale)
      return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// PrimalWealthProblem

PrimalWealthProblem::PrimalWealthProblem(MarketCoefficients market,
                                         UtilitySpec utility,
                                         ConstraintSet constraint, double x0,
                                         WealthOptions opt)
    : market_(std::move(market)),
      utility_(utility),
      constraint_(std::move(constraint)),
      x0_(x0),
      opt_(opt) {
  if (constraint_.m != market_.m)
    throw std::invalid_argument("constraint dimension differs from market");
  if (!(x0 > 0.0)) throw std::invalid_argument("initial wealth must be positive");
}

Eigen::RowVectorXd PrimalWealthProblem::initial_state() const {
  return Eigen::RowVectorXd::Constant(1, x0_);
}

ad::Var PrimalWealthProblem::drift(ad::Tape& tape, double t, ad::Var x,
                                   ad::Var pi) const {
  ad::Var bcol = tape.constant(market_.b(t));
  ad::Var ret = tape.add_scalar(tape.matmul(pi, bcol), market_.r(t));
  return tape.mul(x, ret);
}

ad::Var PrimalWealthProblem::diffusion(ad::Tape& tape, double t, ad::Var x,
                                       ad::Var pi) const {
  ad::Var sig = tape.constant(market_.sigma(t));
  return tape.mul_col(tape.matmul(pi, sig), x);
}

Matrix PrimalWealthProblem::terminal_gain(const Matrix& x) const {
  return gain_matrix(utility_, x, false);
}

Matrix PrimalWealthProblem::terminal_gain_grad(const Matrix& x) const {
  return gain_grad_matrix(utility_, x, false);
}

ad::Var PrimalWealthProblem::control_from_raw(ad::Tape& tape, ad::Var raw) const {
  if (opt_.soft_constraint) return raw;
  return project_hard(tape, constraint_, raw, opt_.cone_rule, opt_.ball_rule);
}

ad::Var PrimalWealthProblem::control_penalty(ad::Tape& tape, ad::Var pi) const {
  if (!opt_.soft_constraint) return {};
  return penalty(tape, constraint_, pi, opt_.penalty);
}

void PrimalWealthProblem::jacobians(double t, const Matrix& x, const Matrix& pi,
                                    Matrix& jb, Matrix& jsigma) const {
  jb = (pi * market_.b(t)).array() + market_.r(t);
  jsigma = pi * market_.sigma(t);
  (void)x;
}

// ---------------------------------------------------------------------------
// DualWealthProblem

DualWealthProblem::DualWealthProblem(MarketCoefficients market, UtilitySpec utility,
                                     ConstraintSet constraint, double x0)
    : market_(std::move(market)),
      utility_(utility),
      constraint_(std::move(constraint)),
      x0_(x0) {
  if (constraint_.m != market_.m)
    throw std::invalid_argument("constraint dimension differs from market");
  if (!(x0 > 0.0)) throw std::invalid_argument("initial wealth must be positive");
}

Eigen::RowVectorXd DualWealthProblem::initial_state() const {
  return Eigen::RowVectorXd::Constant(1, u_eval(utility_, x0_).d1);
}

ad::Var DualWealthProblem::drift(ad::Tape& tape, double t, ad::Var y,
                                 ad::Var v) const {
  ad::Var delta = support(tape, constraint_, v);
  return tape.scale(tape.mul(y, tape.add_scalar(delta, market_.r(t))), -1.0);
}

ad::Var DualWealthProblem::diffusion(ad::Tape& tape, double t, ad::Var y,
                                     ad::Var v) const {
  const Matrix sinv_t = market_.sigma(t).inverse().transpose();
  const Eigen::RowVectorXd th = market_.theta(t).transpose();
  ad::Var dir = tape.add_row(tape.matmul(v, tape.constant(sinv_t)), tape.constant(th));
  return tape.scale(tape.mul_col(dir, y), -1.0);
}

Matrix DualWealthProblem::terminal_gain(const Matrix& y) const {
  return gain_matrix(utility_, y, true);
}

Matrix DualWealthProblem::terminal_gain_grad(const Matrix& y) const {
  return gain_grad_matrix(utility_, y, true);
}

ad::Var DualWealthProblem::control_from_raw(ad::Tape& tape, ad::Var raw) const {
  return project_dual(tape, constraint_, raw);
}

std::optional<FreeInitial> DualWealthProblem::free_initial() const {
  return FreeInitial{0, utility_, x0_};
}

void DualWealthProblem::jacobians(double t, const Matrix& y, const Matrix& v,
                                  Matrix& jb, Matrix& jsigma) const {
  ad::Tape tape;
  const Matrix delta = support(tape, constraint_, tape.constant(v)).value();
  jb = -(delta.array() + market_.r(t)).matrix();
  const Matrix sinv_t = market_.sigma(t).inverse().transpose();
  jsigma = -((v * sinv_t).rowwise() + market_.theta(t).transpose());
  (void)y;
}

// ---------------------------------------------------------------------------
// Heston

namespace {

// Scatter matrices placing per-stock columns into the flattened (1+n) x 2n
// diffusion: X-row entries, and the variance rows' W^s / W^perp entries.
struct HestonLayout {
  Matrix x_on_s;     // n x (d 2n): column j -> (0, j)
  Matrix x_on_perp;  // n x (d 2n): column j -> (0, n + j)
  Matrix v_rows;     // n x (d 2n): column j -> rho xi at (1+j, j), rr xi at (1+j, n+j)
};

HestonLayout heston_layout(const HestonParams& h, int n) {
  const int d = 1 + n, w = 2 * n;
  HestonLayout L;
  L.x_on_s = Matrix::Zero(n, d * w);
  L.x_on_perp = Matrix::Zero(n, d * w);
  L.v_rows = Matrix::Zero(n, d * w);
  const double rr = std::sqrt(1.0 - h.rho * h.rho);
  for (int j = 0; j < n; ++j) {
    L.x_on_s(j, j) = 1.0;
    L.x_on_perp(j, n + j) = 1.0;
    L.v_rows(j, (1 + j) * w + j) = h.rho * h.xi;
    L.v_rows(j, (1 + j) * w + n + j) = rr * h.xi;
  }
  return L;
}

ad::Var variance_drift(ad::Tape& tape, const HestonParams& h, ad::Var vp) {
  return tape.add_scalar(tape.scale(vp, -h.kappa), h.kappa * h.long_run);
}

// Variance rows of the Jacobians, shared by primal and dual.
void variance_jacobians(const HestonParams& h, int n, const Matrix& x, Matrix& jb,
                        Matrix& js) {
  const int d = 1 + n, w = 2 * n;
  const double rr = std::sqrt(1.0 - h.rho * h.rho);
  for (Eigen::Index s = 0; s < x.rows(); ++s)
    for (int j = 0; j < n; ++j) {
      const double v = x(s, 1 + j);
      const bool pos = v > 0.0;
      jb(s, (1 + j) * d + (1 + j)) = pos ? -h.kappa : 0.0;
      const double dsv = pos ? 0.5 / std::sqrt(v) : 0.0;
      js(s, ((1 + j) * w + j) * d + (1 + j)) = h.rho * h.xi * dsv;
      js(s, ((1 + j) * w + n + j) * d + (1 + j)) = rr * h.xi * dsv;
    }
}

}  // namespace

HestonPrimalProblem::HestonPrimalProblem(HestonParams params, int stocks,
                                         UtilitySpec utility, double x0)
    : h_(params), n_(stocks), utility_(utility), x0_(x0) {
  h_.validate();
  if (stocks < 1) throw std::invalid_argument("need at least one stock");
}

Eigen::RowVectorXd HestonPrimalProblem::initial_state() const {
  Eigen::RowVectorXd s(1 + n_);
  s(0) = x0_;
  s.tail(n_).setConstant(h_.v0);
  return s;
}

ad::Var HestonPrimalProblem::drift(ad::Tape& tape, double, ad::Var x,
                                   ad::Var pi) const {
  ad::Var w = tape.slice(x, 0, 1);
  ad::Var vp = tape.relu(tape.slice(x, 1, n_));
  ad::Var ret = tape.add_scalar(tape.scale(tape.sum_cols(tape.mul(pi, vp)), h_.A), h_.r);
  const std::vector<ad::Var> parts{tape.mul(w, ret), variance_drift(tape, h_, vp)};
  return tape.concat(parts);
}

ad::Var HestonPrimalProblem::diffusion(ad::Tape& tape, double, ad::Var x,
                                       ad::Var pi) const {
  const HestonLayout L = heston_layout(h_, n_);
  ad::Var w = tape.slice(x, 0, 1);
  ad::Var sv = tape.sqrt(tape.relu(tape.slice(x, 1, n_)));
  ad::Var xrow = tape.mul_col(tape.mul(pi, sv), w);
  return tape.add(tape.matmul(xrow, tape.constant(L.x_on_s)),
                  tape.matmul(sv, tape.constant(L.v_rows)));
}

Matrix HestonPrimalProblem::terminal_gain(const Matrix& x) const {
  return gain_matrix(utility_, x, false);
}

Matrix HestonPrimalProblem::terminal_gain_grad(const Matrix& x) const {
  return gain_grad_matrix(utility_, x, false);
}

void HestonPrimalProblem::jacobians(double, const Matrix& x, const Matrix& pi,
                                    Matrix& jb, Matrix& js) const {
  const int n = n_, d = 1 + n, w = 2 * n;
  const Eigen::Index k = x.rows();
  jb = Matrix::Zero(k, d * d);
  js = Matrix::Zero(k, static_cast<Eigen::Index>(d) * w * d);
  for (Eigen::Index s = 0; s < k; ++s) {
    const double wealth = x(s, 0);
    double ret = h_.r;
    for (int j = 0; j < n; ++j) {
      const double v = x(s, 1 + j);
      const double vp = std::max(v, 0.0);
      const double sv = std::sqrt(vp);
      ret += h_.A * pi(s, j) * vp;
      jb(s, 1 + j) = v > 0.0 ? wealth * pi(s, j) * h_.A : 0.0;
      js(s, j * d + 0) = pi(s, j) * sv;
      js(s, j * d + 1 + j) = v > 0.0 ? wealth * pi(s, j) * 0.5 / sv : 0.0;
    }
    jb(s, 0) = ret;
  }
  variance_jacobians(h_, n, x, jb, js);
}

HestonDualProblem::HestonDualProblem(HestonParams params, int stocks,
                                     UtilitySpec utility, double x0)
    : h_(params), n_(stocks), utility_(utility), x0_(x0) {
  h_.validate();
  if (stocks < 1) throw std::invalid_argument("need at least one stock");
}

Eigen::RowVectorXd HestonDualProblem::initial_state() const {
  Eigen::RowVectorXd s(1 + n_);
  s(0) = u_eval(utility_, x0_).d1;
  s.tail(n_).setConstant(h_.v0);
  return s;
}

ad::Var HestonDualProblem::drift(ad::Tape& tape, double, ad::Var x, ad::Var) const {
  ad::Var y = tape.slice(x, 0, 1);
  ad::Var vp = tape.relu(tape.slice(x, 1, n_));
  const std::vector<ad::Var> parts{tape.scale(y, -h_.r), variance_drift(tape, h_, vp)};
  return tape.concat(parts);
}

ad::Var HestonDualProblem::diffusion(ad::Tape& tape, double, ad::Var x,
                                     ad::Var gamma) const {
  const HestonLayout L = heston_layout(h_, n_);
  const double rr = std::sqrt(1.0 - h_.rho * h_.rho);
  ad::Var y = tape.slice(x, 0, 1);
  ad::Var sv = tape.sqrt(tape.relu(tape.slice(x, 1, n_)));
  ad::Var on_s = tape.mul_col(tape.scale(sv, -h_.A), y);
  ad::Var on_perp = tape.mul_col(tape.scale(gamma, rr), y);
  return tape.add(tape.add(tape.matmul(on_s, tape.constant(L.x_on_s)),
                           tape.matmul(on_perp, tape.constant(L.x_on_perp))),
                  tape.matmul(sv, tape.constant(L.v_rows)));
}

Matrix HestonDualProblem::terminal_gain(const Matrix& x) const {
  return gain_matrix(utility_, x, true);
}

Matrix HestonDualProblem::terminal_gain_grad(const Matrix& x) const {
  return gain_grad_matrix(utility_, x, true);
}

std::vector<bool> HestonDualProblem::log_coordinates() const {
  std::vector<bool> c(1 + n_, false);
  c[0] = true;
  return c;
}

std::optional<FreeInitial> HestonDualProblem::free_initial() const {
  return FreeInitial{0, utility_, x0_};
}

void HestonDualProblem::jacobians(double, const Matrix& x, const Matrix& gamma,
                                  Matrix& jb, Matrix& js) const {
  const int n = n_, d = 1 + n, w = 2 * n;
  const double rr = std::sqrt(1.0 - h_.rho * h_.rho);
  const Eigen::Index k = x.rows();
  jb = Matrix::Zero(k, d * d);
  js = Matrix::Zero(k, static_cast<Eigen::Index>(d) * w * d);
  for (Eigen::Index s = 0; s < k; ++s) {
    const double y = x(s, 0);
    jb(s, 0) = -h_.r;
    for (int j = 0; j < n; ++j) {
      const double v = x(s, 1 + j);
      const double sv = std::sqrt(std::max(v, 0.0));
      js(s, j * d + 0) = -h_.A * sv;
      js(s, j * d + 1 + j) = v > 0.0 ? -y * h_.A * 0.5 / sv : 0.0;
      js(s, (n + j) * d + 0) = rr * gamma(s, j);
    }
  }
  variance_jacobians(h_, n, x, jb, js);
}

}  // namespace deepsc
