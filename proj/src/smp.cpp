#include "deepsc/smp.hpp"

#include "deepsc/bsde2.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace deepsc {

namespace {

// row s of a (1 x m) times the m x m matrix stored row-major in row s of b
Matrix row_vec_mat(const Matrix& a, const Matrix& b, int m) {
  Matrix out = Matrix::Zero(a.rows(), m);
  for (Eigen::Index s = 0; s < a.rows(); ++s)
    for (int l = 0; l < m; ++l)
      for (int j = 0; j < m; ++j) out(s, j) += a(s, l) * b(s, l * m + j);
  return out;
}

Matrix transpose_rows(const Matrix& a, int m) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index s = 0; s < a.rows(); ++s)
    for (int l = 0; l < m; ++l)
      for (int j = 0; j < m; ++j) out(s, j * m + l) = a(s, l * m + j);
  return out;
}

Matrix diag_rows(const Matrix& d) {
  const int m = static_cast<int>(d.cols());
  Matrix out = Matrix::Zero(d.rows(), m * m);
  for (int l = 0; l < m; ++l) out.col(l * m + l) = d.col(l);
  return out;
}

Matrix project_rows(const ConstraintSet& set, const Matrix& raw) {
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index s = 0; s < raw.rows(); ++s)
    out.row(s) = project_hard(set, Eigen::VectorXd(raw.row(s).transpose()), ConeRule::Square)
                     .transpose();
  return out;
}

Matrix project_dual_rows(const ConstraintSet& set, const Matrix& raw) {
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index s = 0; s < raw.rows(); ++s)
    out.row(s) = project_dual(set, Eigen::VectorXd(raw.row(s).transpose())).transpose();
  return out;
}

Eigen::VectorXd support_rows(const ConstraintSet& set, const Matrix& v) {
  Eigen::VectorXd out(v.rows());
  for (Eigen::Index s = 0; s < v.rows(); ++s)
    out(s) = support(set, Eigen::VectorXd(v.row(s).transpose()));
  return out;
}

void push_stats(double v, double& sum, double& sumsq, long& count) {
  sum += v;
  sumsq += v * v;
  ++count;
}

double std_error(double sum, double sumsq, long count) {
  if (count < 2) return 0.0;
  const double mean = sum / count;
  return std::sqrt(std::max(0.0, sumsq / count - mean * mean) / (count - 1));
}

}  // namespace

// ---------------------------------------------------------------------------

DeterministicSmpMarket::DeterministicSmpMarket(MarketCoefficients c) : c_(std::move(c)) {}

MarketSnapshot DeterministicSmpMarket::snapshot(double t, const Matrix& state) const {
  const Eigen::Index k = state.rows();
  const int m = c_.m;
  const Matrix s = c_.sigma(t);
  const Matrix si = s.inverse();
  MarketSnapshot out;
  out.r = Eigen::VectorXd::Constant(k, c_.r(t));
  out.sigma.resize(k, m * m);
  out.sigma_inv.resize(k, m * m);
  for (int l = 0; l < m; ++l)
    for (int j = 0; j < m; ++j) {
      out.sigma.col(l * m + j).setConstant(s(l, j));
      out.sigma_inv.col(l * m + j).setConstant(si(l, j));
    }
  out.theta = c_.theta(t).transpose().replicate(k, 1);
  out.features = Matrix(k, 0);
  return out;
}

nlohmann::json DeterministicSmpMarket::describe() const {
  return {{"kind", name()}, {"m", c_.m}, {"coefficients", c_.description}};
}

HestonSmpMarket::HestonSmpMarket(HestonParams h, int stocks) : h_(h), n_(stocks) {
  h_.validate();
  if (n_ < 1) throw std::invalid_argument("need at least one stock");
}

Matrix HestonSmpMarket::initial_state(Eigen::Index k) const {
  return Matrix::Constant(k, n_, h_.v0);
}

MarketSnapshot HestonSmpMarket::snapshot(double, const Matrix& v) const {
  const Matrix sv = v.cwiseMax(0.0).cwiseSqrt();
  MarketSnapshot out;
  out.r = Eigen::VectorXd::Constant(v.rows(), h_.r);
  out.sigma = diag_rows(sv);
  out.sigma_inv = diag_rows(v.cwiseMax(kVarianceFloor).cwiseSqrt().cwiseInverse());
  out.theta = h_.A * sv;
  out.features = v;
  return out;
}

Matrix HestonSmpMarket::advance(double, double dt, const Matrix& v, const Matrix& dW) const {
  const double rr = std::sqrt(1.0 - h_.rho * h_.rho), sq = std::sqrt(dt);
  const Matrix vp = v.cwiseMax(0.0);
  const Matrix noise = h_.rho * dW.leftCols(n_) + rr * dW.middleCols(n_, n_);
  return v + dt * (h_.kappa * (h_.long_run - vp.array())).matrix() +
         sq * h_.xi * vp.cwiseSqrt().cwiseProduct(noise);
}

nlohmann::json HestonSmpMarket::describe() const {
  return {{"kind", name()}, {"stocks", n_}, {"r", h_.r}, {"A", h_.A},
          {"kappa", h_.kappa}, {"long_run", h_.long_run}, {"xi", h_.xi},
          {"rho", h_.rho}, {"v0", h_.v0}, {"features", "variance"}};
}

PathDepSmpMarket::PathDepSmpMarket(PathDepVolParams p) : p_(p) { p_.validate(); }

Matrix PathDepSmpMarket::initial_state(Eigen::Index k) const {
  return Matrix::Ones(k, 2 * p_.m);
}

MarketSnapshot PathDepSmpMarket::snapshot(double, const Matrix& state) const {
  const Eigen::Index k = state.rows();
  const int m = p_.m;
  Matrix sig(k, m);
  for (Eigen::Index s = 0; s < k; ++s) {
    const Eigen::VectorXd cur = state.row(s).head(m).transpose();
    const Eigen::VectorXd mx = state.row(s).tail(m).transpose();
    sig.row(s) = pathdep_sigma(p_, mx, cur).transpose();
  }
  MarketSnapshot out;
  out.r = Eigen::VectorXd::Constant(k, p_.r);
  out.sigma = diag_rows(sig);
  out.sigma_inv = diag_rows(sig.cwiseInverse());
  out.theta = (p_.mu - p_.r) * sig.cwiseInverse();
  out.features = state;
  return out;
}

Matrix PathDepSmpMarket::advance(double t, double dt, const Matrix& state,
                                 const Matrix& dW) const {
  const int m = p_.m;
  const MarketSnapshot snap = snapshot(t, state);
  Matrix next = state;
  const double sq = std::sqrt(dt);
  for (Eigen::Index s = 0; s < state.rows(); ++s)
    for (int i = 0; i < m; ++i) {
      const double sg = snap.sigma(s, i * m + i);
      // exact log step for frozen sigma
      next(s, i) = state(s, i) * std::exp((p_.mu - 0.5 * sg * sg) * dt + sg * sq * dW(s, i));
      next(s, m + i) = std::max(state(s, m + i), next(s, i));
    }
  return next;
}

nlohmann::json PathDepSmpMarket::describe() const {
  return {{"kind", name()}, {"m", p_.m}, {"sigma_low", p_.sigma_low},
          {"sigma_high", p_.sigma_high}, {"r", p_.r}, {"mu", p_.mu},
          {"features", "stock, running max"}};
}

// ---------------------------------------------------------------------------

void SmpConfig::validate() const {
  if (!(T > 0.0)) throw std::invalid_argument("T must be positive");
  if (N < 1) throw std::invalid_argument("N must be at least 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (batch < 2) throw std::invalid_argument("batch must be at least 2");
  if (antithetic && batch % 2) throw std::invalid_argument("antithetic batch must be even");
  if (!(x0 > 0.0)) throw std::invalid_argument("x0 must be positive");
  if (!(schedule.bsde_rate_initial > 0.0)) throw std::invalid_argument("rate must be positive");
}

nlohmann::json SmpConfig::to_json() const {
  nlohmann::json j;
  j["T"] = T;
  j["N"] = N;
  j["iterations"] = iterations;
  j["batch"] = batch;
  j["rate_initial"] = schedule.bsde_rate_initial;
  j["schedule"] = nn::to_json(schedule);
  j["optimizer"] = nn::optimizer_name(optimizer);
  j["adam"] = {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}};
  j["activation"] = ad::activation_name(activation);
  j["layers"] = layers;
  j["hidden"] = hidden;
  j["init_std"] = init_std;
  j["init_seed"] = init_seed;
  j["path_seed"] = path_seed;
  j["antithetic"] = antithetic;
  j["divergence_threshold"] = divergence_threshold;
  j["x0"] = x0;
  return j;
}

void SmpTrace::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "iteration,loss_y,loss_Q,loss_v,y,seconds\n" << std::setprecision(12);
  for (const auto& r : rows)
    os << r.iteration << "," << r.loss_y << "," << r.loss_q << "," << r.loss_v << ","
       << r.y << "," << r.seconds << "\n";
}

nlohmann::json SmpState::to_json() const {
  nlohmann::json j;
  j["y"] = nn::matrix_json(y);
  j["q_nets"] = nlohmann::json::array();
  j["v_nets"] = nlohmann::json::array();
  for (const auto& n : q_nets) j["q_nets"].push_back(n.to_json());
  for (const auto& n : v_nets) j["v_nets"].push_back(n.to_json());
  j["y_opt"] = nn::optimizer_json(y_opt);
  j["q_opt"] = nn::optimizer_json(q_opt);
  j["v_opt"] = nn::optimizer_json(v_opt);
  return j;
}

SmpState SmpState::from_json(const nlohmann::json& j) {
  SmpState s;
  s.y = nn::matrix_from_json(j.at("y"));
  for (const auto& n : j.at("q_nets")) s.q_nets.push_back(nn::FeedForwardNetwork::from_json(n));
  for (const auto& n : j.at("v_nets")) s.v_nets.push_back(nn::FeedForwardNetwork::from_json(n));
  s.y_opt = nn::optimizer_from_json(j.at("y_opt"));
  s.q_opt = nn::optimizer_from_json(j.at("q_opt"));
  s.v_opt = nn::optimizer_from_json(j.at("v_opt"));
  return s;
}

nlohmann::json ValueBracket::to_json() const {
  return {{"u_low", u_low}, {"u_high", u_high}, {"se_low", se_low},
          {"se_high", se_high}, {"M", M}, {"excluded", excluded},
          {"N", N}, {"T", T}, {"seeds", {{"eval", eval_seed},
                                          {"init", init_seed},
                                          {"path", path_seed}}}};
}

ValueBracket ValueBracket::from_json(const nlohmann::json& j) {
  ValueBracket b;
  b.u_low = j.at("u_low");
  b.u_high = j.at("u_high");
  b.se_low = j.at("se_low");
  b.se_high = j.at("se_high");
  b.M = j.at("M");
  b.excluded = j.at("excluded");
  b.N = j.at("N");
  b.T = j.at("T");
  b.eval_seed = j.at("seeds").at("eval");
  b.init_seed = j.at("seeds").at("init");
  b.path_seed = j.at("seeds").at("path");
  return b;
}

double loss_Q(const Matrix& YN, const Matrix& P2N, const UtilitySpec& utility) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < YN.rows(); ++i) {
    const double e = dual_eval(utility, YN(i, 0)).d1 + P2N(i, 0);
    s += e * e;
  }
  return s / YN.rows();
}

// ---------------------------------------------------------------------------

SmpSolver::SmpSolver(const SmpMarket& market, ConstraintSet constraint,
                     UtilitySpec utility, SmpConfig config)
    : market_(market),
      constraint_(std::move(constraint)),
      utility_(utility),
      cfg_(std::move(config)) {
  if (cfg_.iterations > 0) cfg_.schedule.total = cfg_.iterations;
  cfg_.validate();
  m_ = market_.stocks();
  if (constraint_.m != m_) throw std::invalid_argument("constraint dimension differs from market");
  const int p = 1 + market_.feature_dim();
  const auto shape = nn::NetworkShape::make(p, m_, cfg_.hidden, cfg_.layers, cfg_.activation);
  for (int i = 0; i < cfg_.N; ++i) {
    state_.q_nets.emplace_back(shape, mix_seed(cfg_.init_seed, 2 * i), cfg_.init_std);
    state_.v_nets.emplace_back(shape, mix_seed(cfg_.init_seed, 2 * i + 1), cfg_.init_std);
  }
  // the dual optimum at T = 0 is U'(x0)
  state_.y = Matrix::Constant(1, 1, u_eval(utility_, cfg_.x0).d1);
  state_.y_opt.kind = state_.q_opt.kind = state_.v_opt.kind = cfg_.optimizer;
  block_ = static_cast<ad::ParamId>(2 * (cfg_.layers + 1));
}

Matrix SmpSolver::v_value(int i, const Matrix& input) const {
  if (constraint_.kind == SetKind::Full) return Matrix::Zero(input.rows(), m_);
  return project_dual_rows(constraint_, state_.v_nets[i].evaluate(input));
}

SmpPaths SmpSolver::sweep(const std::vector<Matrix>& dW, bool train_mode) {
  if (static_cast<int>(dW.size()) != cfg_.N)
    throw std::invalid_argument("increment count differs from N");
  const Eigen::Index k = dW[0].rows();
  const double dt = cfg_.T / cfg_.N, sq = std::sqrt(dt);
  SmpPaths out;
  Matrix ms = market_.initial_state(k);
  out.Y.push_back(Matrix::Constant(k, 1, state_.y(0, 0)));
  out.P2.push_back(Matrix::Constant(k, 1, cfg_.x0));
  for (int i = 0; i < cfg_.N; ++i) {
    const double t = dt * i;
    MarketSnapshot snap = market_.snapshot(t, ms);
    Matrix input(k, 1 + snap.features.cols());
    input << out.Y.back(), snap.features;
    if (train_mode) {
      state_.q_nets[i].update_normalisation(input);
      state_.v_nets[i].update_normalisation(input);
    }
    const Matrix h = project_rows(constraint_, state_.q_nets[i].evaluate(input));
    const Matrix v = v_value(i, input);
    const Matrix& Y = out.Y.back();
    const Matrix& P2 = out.P2.back();
    const Matrix Q2 = row_vec_mat(h, snap.sigma, m_).array().colwise() * P2.col(0).array();
    const Eigen::VectorXd delta = support_rows(constraint_, v);
    if (!delta.allFinite()) throw std::domain_error("dual control has infinite support");
    Matrix phi = snap.theta;
    if (constraint_.kind != SetKind::Full)
      phi += row_vec_mat(v, transpose_rows(snap.sigma_inv, m_), m_);
    const Matrix dws = dW[i].leftCols(m_);
    // log-space step keeps Y positive and exactly linear in y
    const Eigen::ArrayXd expo = -(snap.r + delta).array() * dt -
                                0.5 * dt * phi.rowwise().squaredNorm().array() -
                                sq * phi.cwiseProduct(dws).rowwise().sum().array();
    out.Y.push_back((Y.col(0).array() * expo.exp()).matrix());
    out.P2.push_back(P2 + dt * (snap.r.cwiseProduct(P2.col(0)) +
                                Q2.cwiseProduct(snap.theta).rowwise().sum()) +
                     sq * Q2.cwiseProduct(dws).rowwise().sum());
    out.Q2.push_back(Q2);
    out.v.push_back(v);
    out.h.push_back(h);
    out.input.push_back(std::move(input));
    ms = market_.advance(t, dt, ms, dW[i]);
    out.market.push_back(std::move(snap));
  }
  if (!out.Y.back().allFinite() || !out.P2.back().allFinite())
    throw SmpDivergenceError("non-finite terminal state", {});
  return out;
}

SmpPaths SmpSolver::simulate(const std::vector<Matrix>& dW) const {
  return const_cast<SmpSolver*>(this)->sweep(dW, false);
}

SmpTraceRow SmpSolver::iterate(long it) {
  const auto t_start = std::chrono::steady_clock::now();
  const double rate = cfg_.schedule.rate_at(it).first;
  const IncrementGenerator gen(cfg_.path_seed, cfg_.antithetic);
  const Eigen::Index k = cfg_.batch;
  const auto dW = gen.path_batch(static_cast<std::uint64_t>(it) * k, k, cfg_.N,
                                 market_.noise_dim());
  const double dt = cfg_.T / cfg_.N, sq = std::sqrt(dt);
  SmpTraceRow row;
  row.iteration = it;

  // y against E[U~(Y_N)] + x0 y
  SmpPaths sp = sweep(dW, true);
  {
    ad::Tape tape;
    ad::Var y = tape.parameter(state_.y, 0);
    const Matrix unit = sp.Y.back() / state_.y(0, 0);
    ad::Var loss = loss_L3(tape, y, unit, utility_, cfg_.x0);
    row.loss_y = tape.value(loss)(0, 0);
    const ad::ParamId id = 0;
    const Matrix g = tape.backward(loss, std::span<const ad::ParamId>(&id, 1)).at(0);
    nn::optimizer_step({&state_.y}, {g}, state_.y_opt, rate);
    if (!(state_.y(0, 0) > 0.0))
      throw SmpDivergenceError("y left (0, inf) at iteration " + std::to_string(it), {});
  }

  // Q2 nets against the terminal adjoint condition
  sp = sweep(dW, false);
  {
    ad::Tape tape;
    ad::Var P2 = tape.constant(Matrix::Constant(k, 1, cfg_.x0));
    for (int i = 0; i < cfg_.N; ++i) {
      const auto& snap = sp.market[i];
      ad::Var raw = std::as_const(state_.q_nets[i]).forward(tape, sp.input[i], block_ * i);
      ad::Var h = project_hard(tape, constraint_, raw, ConeRule::Square);
      ad::Var Q2 = tape.mul_col(tape.batched_matmul(h, tape.constant(snap.sigma), 1, m_, m_), P2);
      ad::Var drift = tape.add(tape.mul(P2, tape.constant(snap.r)),
                               tape.sum_cols(tape.mul(Q2, tape.constant(snap.theta))));
      ad::Var diff = tape.sum_cols(tape.mul(Q2, tape.constant(dW[i].leftCols(m_))));
      P2 = tape.add(P2, tape.add(tape.scale(drift, dt), tape.scale(diff, sq)));
    }
    Matrix dual_grad(k, 1);
    for (Eigen::Index s = 0; s < k; ++s) dual_grad(s, 0) = dual_eval(utility_, sp.Y.back()(s, 0)).d1;
    ad::Var loss = tape.mean(tape.square(tape.add(P2, tape.constant(dual_grad))));
    row.loss_q = tape.value(loss)(0, 0);
    if (!std::isfinite(row.loss_q) || row.loss_q > cfg_.divergence_threshold)
      throw SmpDivergenceError("terminal adjoint loss diverged at iteration " +
                                   std::to_string(it), {});
    std::vector<ad::ParamId> ids;
    std::vector<Matrix*> params;
    for (int i = 0; i < cfg_.N; ++i)
      for (std::size_t j = 0; j < state_.q_nets[i].params().size(); ++j) {
        ids.push_back(block_ * i + static_cast<ad::ParamId>(j));
        params.push_back(&state_.q_nets[i].params()[j]);
      }
    const ad::Gradients g = tape.backward(loss, ids);
    std::vector<Matrix> grads;
    for (auto id : ids) grads.push_back(g.at(id));
    nn::optimizer_step(params, grads, state_.q_opt, rate);
  }

  // v nets against the complementarity residual; K = R^m pins v at 0
  if (constraint_.kind != SetKind::Full) {
    sp = sweep(dW, false);
    ad::Tape tape;
    ad::Var total;
    for (int i = 0; i < cfg_.N; ++i) {
      const auto& snap = sp.market[i];
      ad::Var raw = std::as_const(state_.v_nets[i]).forward(tape, sp.input[i], block_ * i);
      ad::Var v = project_dual(tape, constraint_, raw);
      ad::Var sv = tape.batched_matmul(v, tape.constant(transpose_rows(snap.sigma_inv, m_)),
                                       1, m_, m_);
      ad::Var res = tape.add(tape.mul(tape.constant(sp.P2[i]), support(tape, constraint_, v)),
                             tape.sum_cols(tape.mul(tape.constant(sp.Q2[i]), sv)));
      ad::Var term = tape.mean(tape.square(res));
      total = total.valid() ? tape.add(total, term) : term;
    }
    row.loss_v = tape.value(total)(0, 0);
    std::vector<ad::ParamId> ids;
    std::vector<Matrix*> params;
    for (int i = 0; i < cfg_.N; ++i)
      for (std::size_t j = 0; j < state_.v_nets[i].params().size(); ++j) {
        ids.push_back(block_ * i + static_cast<ad::ParamId>(j));
        params.push_back(&state_.v_nets[i].params()[j]);
      }
    const ad::Gradients g = tape.backward(total, ids);
    std::vector<Matrix> grads;
    for (auto id : ids) grads.push_back(g.at(id));
    nn::optimizer_step(params, grads, state_.v_opt, rate);
  }

  row.y = state_.y(0, 0);
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return row;
}

SmpTrace SmpSolver::train() {
  SmpTrace trace;
  trace.rows.reserve(cfg_.iterations);
  for (long it = 0; it < cfg_.iterations; ++it) {
    try {
      trace.rows.push_back(iterate(it));
    } catch (const SmpDivergenceError& e) {
      throw SmpDivergenceError(e.what(), trace);
    } catch (const ad::NonFiniteError& e) {
      throw SmpDivergenceError(std::string("non-finite value: ") + e.what(), trace);
    } catch (const nn::NonFiniteGradient& e) {
      throw SmpDivergenceError(std::string("non-finite gradient: ") + e.what(), trace);
    }
  }
  return trace;
}

ValueBracket SmpSolver::bounds(const IncrementGenerator& gen, long M, long chunk) const {
  if (M < 2) throw std::invalid_argument("need at least two evaluation paths");
  if (chunk % 2) ++chunk;
  const bool pair = gen.antithetic();
  double sl = 0.0, sql = 0.0, sh = 0.0, sqh = 0.0;
  long cl = 0, ch = 0, excluded = 0;
  double low_total = 0.0, high_total = 0.0;
  long low_n = 0;
  for (long first = 0; first < M; first += chunk) {
    const long k = std::min(chunk, M - first);
    const auto dW = gen.path_batch(static_cast<std::uint64_t>(first), k, cfg_.N,
                                   market_.noise_dim());
    const SmpPaths sp = simulate(dW);
    const long step = pair && k % 2 == 0 ? 2 : 1;
    for (long s = 0; s + step <= k; s += step) {
      double lo = 0.0, hi = 0.0;
      int lo_n = 0;
      for (long j = s; j < s + step; ++j) {
        const double x = sp.P2.back()(j, 0);
        if (x > 0.0) {
          const double u = u_eval(utility_, x).value;
          lo += u;
          low_total += u;
          ++lo_n;
          ++low_n;
        } else {
          ++excluded;
        }
        const double uh = dual_eval(utility_, sp.Y.back()(j, 0)).value;
        hi += uh;
        high_total += uh;
      }
      if (lo_n == step) push_stats(lo / step, sl, sql, cl);
      push_stats(hi / step, sh, sqh, ch);
    }
  }
  ValueBracket b;
  b.u_low = low_n ? low_total / low_n : 0.0;
  b.u_high = high_total / M + cfg_.x0 * state_.y(0, 0);
  b.se_low = std_error(sl, sql, cl);
  b.se_high = std_error(sh, sqh, ch);
  b.M = M;
  b.excluded = excluded;
  b.N = cfg_.N;
  b.T = cfg_.T;
  b.eval_seed = gen.seed();
  b.init_seed = cfg_.init_seed;
  b.path_seed = cfg_.path_seed;
  return b;
}

}  // namespace deepsc
