#include "deepsc/bsde2.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace deepsc {

namespace {

Matrix row_products(const Matrix& a, const Matrix& b, int n, int p, int q) {
  // per-row (n x p)(p x q), b may be shared
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

double abs_sum(const std::vector<Matrix>& gs) {
  double s = 0.0;
  for (const auto& g : gs) s += g.cwiseAbs().sum();
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

void Bsde2Config::validate() const {
  if (!(T > 0.0)) throw std::invalid_argument("T must be positive");
  if (N < 1) throw std::invalid_argument("N must be at least 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (batch < 2) throw std::invalid_argument("batch must be at least 2");
  if (antithetic && batch % 2) throw std::invalid_argument("antithetic batch must be even");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (layers < 1) throw std::invalid_argument("layers must be >= 1");
  if (!(schedule.control_rate_initial < schedule.bsde_rate_initial))
    throw std::invalid_argument("control rate must be below the BSDE rate");
}

nlohmann::json Bsde2Config::to_json() const {
  nlohmann::json j;
  j["T"] = T;
  j["N"] = N;
  j["iterations"] = iterations;
  j["batch"] = batch;
  j["beta"] = beta;
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
  j["warm_start"] = warm_start;
  j["control_warmup"] = control_warmup;
  return j;
}

void TrainingTrace::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "iteration,L1,control_grad,L3,L3_grad,value,seconds\n";
  os << std::setprecision(12);
  for (const auto& r : rows)
    os << r.iteration << "," << r.l1 << "," << r.control_grad << "," << r.l3 << ","
       << r.l3_grad << "," << r.value << "," << r.seconds << "\n";
}

long Bsde2State::bsde_parameter_count() const {
  long c = v0.size() + z0.size();
  for (const auto& g : gamma_nets) c += g.parameter_count();
  return c;
}

nlohmann::json Bsde2State::to_json() const {
  nlohmann::json j;
  j["v0"] = nn::matrix_json(v0);
  j["z0"] = nn::matrix_json(z0);
  j["has_y0"] = has_y0;
  if (has_y0) j["y0"] = nn::matrix_json(y0);
  j["control_nets"] = nlohmann::json::array();
  j["gamma_nets"] = nlohmann::json::array();
  for (const auto& n : control_nets) j["control_nets"].push_back(n.to_json());
  for (const auto& n : gamma_nets) j["gamma_nets"].push_back(n.to_json());
  j["bsde_opt"] = nn::optimizer_json(bsde_opt);
  j["y0_opt"] = nn::optimizer_json(y0_opt);
  j["control_opts"] = nlohmann::json::array();
  for (const auto& o : control_opts) j["control_opts"].push_back(nn::optimizer_json(o));
  return j;
}

Bsde2State Bsde2State::from_json(const nlohmann::json& j) {
  Bsde2State s;
  s.v0 = nn::matrix_from_json(j.at("v0"));
  s.z0 = nn::matrix_from_json(j.at("z0"));
  s.has_y0 = j.at("has_y0");
  if (s.has_y0) s.y0 = nn::matrix_from_json(j.at("y0"));
  for (const auto& n : j.at("control_nets"))
    s.control_nets.push_back(nn::FeedForwardNetwork::from_json(n));
  for (const auto& n : j.at("gamma_nets"))
    s.gamma_nets.push_back(nn::FeedForwardNetwork::from_json(n));
  s.bsde_opt = nn::optimizer_from_json(j.at("bsde_opt"));
  s.y0_opt = nn::optimizer_from_json(j.at("y0_opt"));
  for (const auto& o : j.at("control_opts")) s.control_opts.push_back(nn::optimizer_from_json(o));
  return s;
}

void Bsde2State::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << to_json().dump();
}

Bsde2State Bsde2State::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return from_json(nlohmann::json::parse(is));
}

// ---------------------------------------------------------------------------

ad::Var loss_L1(ad::Tape& tape, ad::Var VN, ad::Var ZN, const Matrix& g,
                const Matrix& dg, double beta) {
  ad::Var ev = tape.sub(VN, tape.constant(g));
  ad::Var loss = tape.mean(tape.square(ev));
  if (beta != 0.0) {
    ad::Var ez = tape.sub(ZN, tape.constant(dg));
    loss = tape.add(loss, tape.scale(tape.mean(tape.sum_cols(tape.square(ez))), beta));
  }
  return loss;
}

ad::Var loss_L3(ad::Tape& tape, ad::Var y0, const Matrix& unit_YN,
                const UtilitySpec& utility, double x0) {
  ad::Var y = tape.mul(tape.broadcast_rows(y0, unit_YN.rows()), tape.constant(unit_YN));
  return tape.add(tape.mean(tape.map(y, dual_fn(utility))), tape.scale(y0, x0));
}

Matrix symmetriser(int d) {
  Matrix S = Matrix::Zero(d * d, d * d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      S(a * d + b, a * d + b) += 0.5;
      S(b * d + a, a * d + b) += 0.5;
    }
  return S;
}

Bsde2Solver::Bsde2Solver(const ControlProblem& problem, Bsde2Config config)
    : problem_(problem), cfg_(std::move(config)) {
  if (cfg_.iterations > 0) cfg_.schedule.total = cfg_.iterations;
  cfg_.validate();
  d_ = problem_.state_dim();
  n_ = problem_.noise_dim();
  m_ = problem_.control_dim();
  sym_ = symmetriser(d_);

  state_.v0 = Matrix::Zero(1, 1);
  state_.z0 = Matrix::Zero(1, d_);
  if (auto fi = problem_.free_initial()) {
    state_.has_y0 = true;
    state_.y0 = Matrix::Constant(1, 1, problem_.initial_state()(fi->coord));
    if (!(state_.y0(0, 0) > 0.0))
      throw std::invalid_argument("free initial value must start positive");
  }
  const auto cshape = nn::NetworkShape::make(d_, m_, cfg_.hidden, cfg_.layers, cfg_.activation);
  const auto gshape =
      nn::NetworkShape::make(d_, d_ * d_, cfg_.hidden, cfg_.layers, cfg_.activation);
  for (int i = 0; i < cfg_.N; ++i) {
    state_.control_nets.emplace_back(cshape, mix_seed(cfg_.init_seed, 2 * i), cfg_.init_std);
    state_.gamma_nets.emplace_back(gshape, mix_seed(cfg_.init_seed, 2 * i + 1),
                                   cfg_.init_std);
    nn::OptimizerState o;
    o.kind = cfg_.optimizer;
    state_.control_opts.push_back(o);
  }
  state_.bsde_opt.kind = cfg_.optimizer;
  state_.y0_opt.kind = cfg_.optimizer;
  gamma_block_ = static_cast<ad::ParamId>(2 * (cfg_.layers + 1));
  if (cfg_.warm_start) {
    const Matrix x0 = initial_state();
    state_.v0 = problem_.terminal_gain(x0);
    state_.z0 = problem_.terminal_gain_grad(x0);
  }
}

Eigen::RowVectorXd Bsde2Solver::initial_state() const {
  Eigen::RowVectorXd x = problem_.initial_state();
  if (state_.has_y0) x(problem_.free_initial()->coord) = state_.y0(0, 0);
  return x;
}

double Bsde2Solver::value_at_zero() const {
  double v = state_.v0(0, 0);
  if (state_.has_y0) v += state_.y0(0, 0) * problem_.free_initial()->x0;
  return v;
}

Matrix Bsde2Solver::gamma_value(int i, const Matrix& x) const {
  return state_.gamma_nets[i].evaluate(x) * sym_;
}

Trajectories Bsde2Solver::sweep(const std::vector<Matrix>& dW, bool train_mode,
                                bool with_z) {
  if (static_cast<int>(dW.size()) != cfg_.N)
    throw std::invalid_argument("increment count differs from N");
  const Eigen::Index k = dW[0].rows();
  const double dt = cfg_.T / cfg_.N, sq = std::sqrt(dt);
  Trajectories tr;
  tr.X.push_back(initial_state().replicate(k, 1));
  if (with_z) {
    tr.Z.push_back(state_.z0.replicate(k, 1));
    tr.V.push_back(Matrix::Constant(k, 1, state_.v0(0, 0)));
  }
  for (int i = 0; i < cfg_.N; ++i) {
    const double t = dt * i;
    const Matrix& x = tr.X.back();
    if (!x.allFinite())
      throw DivergenceError("non-finite state at step " + std::to_string(i), {});
    if (train_mode) {
      state_.control_nets[i].update_normalisation(x);
      state_.gamma_nets[i].update_normalisation(x);
    }
    const Matrix pi = problem_.control_value(state_.control_nets[i].evaluate(x));
    const Matrix b = problem_.drift_value(t, x, pi);
    const Matrix s = problem_.diffusion_value(t, x, pi);
    if (with_z) {
      const Matrix G = gamma_value(i, x);
      const Matrix q = row_products(G, s, d_, d_, n_);
      const Matrix& z = tr.Z.back();
      const Matrix dxh = hamiltonian_H_grad(problem_, t, x, pi, z, q);
      const Matrix sdw = row_products(s, dW[i], d_, n_, 1);
      tr.V.push_back(tr.V.back() + sq * z.cwiseProduct(sdw).rowwise().sum());
      tr.Z.push_back(z - dt * dxh + sq * row_products(q, dW[i], d_, n_, 1));
      tr.gamma.push_back(G);
    }
    tr.pi.push_back(pi);
    tr.sigma.push_back(s);
    tr.X.push_back(problem_.step_state(x, b, s, dt, dW[i]));
  }
  if (!tr.X.back().allFinite())
    throw DivergenceError("non-finite terminal state", {});
  return tr;
}

Trajectories Bsde2Solver::simulate(const std::vector<Matrix>& dW) const {
  // sweep only mutates normalisation statistics in train mode
  return const_cast<Bsde2Solver*>(this)->sweep(dW, false, true);
}

double Bsde2Solver::l1_on(const std::vector<Matrix>& dW) const {
  const Trajectories tr = simulate(dW);
  const Matrix& XN = tr.X.back();
  const Matrix ev = tr.V.back() - problem_.terminal_gain(XN);
  const Matrix ez = tr.Z.back() - problem_.terminal_gain_grad(XN);
  return ev.squaredNorm() / ev.rows() + cfg_.beta * ez.squaredNorm() / ez.rows();
}

TraceRow Bsde2Solver::iterate(long it) {
  const auto t_start = std::chrono::steady_clock::now();
  const auto [bsde_rate, control_rate] = cfg_.schedule.rate_at(it);
  const IncrementGenerator gen(cfg_.path_seed, cfg_.antithetic);
  const Eigen::Index k = cfg_.batch;
  const auto dW = gen.path_batch(static_cast<std::uint64_t>(it) * k, k, cfg_.N, n_);
  const double dt = cfg_.T / cfg_.N, sq = std::sqrt(dt);
  TraceRow row;
  row.iteration = it;

  // (a) BSDE step on v0, z0 and the Gamma nets; y0 against L3.
  const Trajectories tr = sweep(dW, true, false);
  {
    ad::Tape tape;
    ad::Var v0 = tape.parameter(state_.v0, 0);
    ad::Var z0 = tape.parameter(state_.z0, 1);
    ad::Var V = tape.broadcast_rows(v0, k);
    ad::Var Z = tape.broadcast_rows(z0, k);
    ad::Var S = tape.constant(sym_);
    Matrix jb, js;
    for (int i = 0; i < cfg_.N; ++i) {
      const double t = dt * i;
      const ad::ParamId base = 2 + gamma_block_ * i;
      ad::Var G = tape.matmul(
          std::as_const(state_.gamma_nets[i]).forward(tape, tr.X[i], base), S);
      ad::Var q = tape.batched_matmul(G, tape.constant(tr.sigma[i]), d_, d_, n_);
      const Matrix sdw = row_products(tr.sigma[i], dW[i], d_, n_, 1);
      V = tape.add(V, tape.scale(tape.sum_cols(tape.mul(Z, tape.constant(sdw))), sq));
      problem_.jacobians(t, tr.X[i], tr.pi[i], jb, js);
      ad::Var dxh = tape.add(tape.batched_matmul(Z, tape.constant(jb), 1, d_, d_),
                             tape.batched_matmul(q, tape.constant(js), 1, d_ * n_, d_));
      Z = tape.add(tape.sub(Z, tape.scale(dxh, dt)),
                   tape.scale(tape.batched_matmul(q, tape.constant(dW[i]), d_, n_, 1), sq));
    }
    const Matrix& XN = tr.X.back();
    ad::Var loss = loss_L1(tape, V, Z, problem_.terminal_gain(XN),
                           problem_.terminal_gain_grad(XN), cfg_.beta);
    row.l1 = tape.value(loss)(0, 0);
    if (!std::isfinite(row.l1) || row.l1 > cfg_.divergence_threshold)
      throw DivergenceError("L1 diverged at iteration " + std::to_string(it), {});

    std::vector<ad::ParamId> ids{0, 1};
    std::vector<Matrix*> params{&state_.v0, &state_.z0};
    for (int i = 0; i < cfg_.N; ++i)
      for (std::size_t j = 0; j < state_.gamma_nets[i].params().size(); ++j) {
        ids.push_back(2 + gamma_block_ * i + static_cast<ad::ParamId>(j));
        params.push_back(&state_.gamma_nets[i].params()[j]);
      }
    const ad::Gradients g = tape.backward(loss, ids);
    std::vector<Matrix> grads;
    grads.reserve(ids.size());
    for (auto id : ids) grads.push_back(g.at(id));
    nn::optimizer_step(params, grads, state_.bsde_opt, bsde_rate);
  }
  if (state_.has_y0) {
    const auto fi = *problem_.free_initial();
    ad::Tape tape;
    ad::Var y0 = tape.parameter(state_.y0, 0);
    const Matrix unit = tr.X.back().col(fi.coord) / state_.y0(0, 0);
    ad::Var loss = loss_L3(tape, y0, unit, fi.dual_utility, fi.x0);
    row.l3 = tape.value(loss)(0, 0);
    const ad::ParamId id = 0;
    const Matrix grad = tape.backward(loss, std::span<const ad::ParamId>(&id, 1)).at(0);
    row.l3_grad = std::abs(grad(0, 0));
    nn::optimizer_step({&state_.y0}, {grad}, state_.y0_opt, bsde_rate);
    if (!(state_.y0(0, 0) > 0.0))
      throw DivergenceError("y0 left (0, inf) at iteration " + std::to_string(it), {});
  }

  // (b) resimulate on the same increments, then one step per control net.
  if (it >= cfg_.control_warmup) {
    const Trajectories tz = sweep(dW, false, true);
    ad::Tape tape;
    const ad::ParamId block = static_cast<ad::ParamId>(2 * (cfg_.layers + 1));
    ad::Var total;
    for (int i = 0; i < cfg_.N; ++i) {
      const double t = dt * i;
      ad::Var raw = std::as_const(state_.control_nets[i]).forward(tape, tz.X[i], block * i);
      ad::Var pi = problem_.control_from_raw(tape, raw);
      ad::Var F = hamiltonian_F(tape, problem_, t, tape.constant(tz.X[i]), pi,
                                tape.constant(tz.Z[i]), tape.constant(tz.gamma[i]));
      ad::Var term = tape.scale(tape.mean(F), problem_.minimise() ? 1.0 : -1.0);
      ad::Var pen = problem_.control_penalty(tape, pi);
      if (pen.valid()) term = tape.add(term, tape.mean(pen));
      total = total.valid() ? tape.add(total, term) : term;
    }
    std::vector<ad::ParamId> ids;
    for (int i = 0; i < cfg_.N; ++i)
      for (std::size_t j = 0; j < state_.control_nets[i].params().size(); ++j)
        ids.push_back(block * i + static_cast<ad::ParamId>(j));
    const ad::Gradients g = tape.backward(total, ids);
    double gsum = 0.0;
    for (int i = 0; i < cfg_.N; ++i) {
      auto& net = state_.control_nets[i];
      std::vector<Matrix*> params;
      std::vector<Matrix> grads;
      for (std::size_t j = 0; j < net.params().size(); ++j) {
        params.push_back(&net.params()[j]);
        grads.push_back(g.at(block * i + static_cast<ad::ParamId>(j)));
      }
      gsum += abs_sum(grads);
      nn::optimizer_step(params, grads, state_.control_opts[i], control_rate);
    }
    row.control_grad = gsum;
  }

  row.value = value_at_zero();
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return row;
}

TrainingTrace Bsde2Solver::train() {
  TrainingTrace trace;
  trace.rows.reserve(cfg_.iterations);
  for (long it = 0; it < cfg_.iterations; ++it) {
    try {
      trace.rows.push_back(iterate(it));
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), trace);
    } catch (const ad::NonFiniteError& e) {
      throw DivergenceError(std::string("non-finite value: ") + e.what(), trace);
    } catch (const nn::NonFiniteGradient& e) {
      throw DivergenceError(std::string("non-finite gradient: ") + e.what(), trace);
    }
  }
  return trace;
}

McEstimate Bsde2Solver::evaluate(const IncrementGenerator& gen, long paths,
                                 long chunk) const {
  if (paths < 2) throw std::invalid_argument("need at least two evaluation paths");
  if (chunk % 2) ++chunk;
  const double dt = cfg_.T / cfg_.N, sq = std::sqrt(dt);
  const bool pair = gen.antithetic();
  double sum = 0.0, sumsq = 0.0;
  long count = 0;
  for (long first = 0; first < paths; first += chunk) {
    const long k = std::min(chunk, paths - first);
    const auto dW = gen.path_batch(static_cast<std::uint64_t>(first), k, cfg_.N, n_);
    const Trajectories tr = simulate(dW);
    Matrix est = problem_.terminal_gain(tr.X.back());
    for (int i = 0; i < cfg_.N; ++i) {
      const Matrix sdw = row_products(tr.sigma[i], dW[i], d_, n_, 1);
      est -= sq * tr.Z[i].cwiseProduct(sdw).rowwise().sum();
    }
    // antithetic pairs are averaged so the standard error is honest
    const long step = pair && k % 2 == 0 ? 2 : 1;
    for (long s = 0; s + step <= k; s += step) {
      const double v = step == 2 ? 0.5 * (est(s, 0) + est(s + 1, 0)) : est(s, 0);
      sum += v;
      sumsq += v * v;
      ++count;
    }
  }
  McEstimate r;
  r.mean = sum / count;
  r.se = std::sqrt(std::max(0.0, sumsq / count - r.mean * r.mean) / std::max(1L, count - 1));
  r.paths = paths;
  if (state_.has_y0) r.mean += state_.y0(0, 0) * problem_.free_initial()->x0;
  return r;
}

}  // namespace deepsc
