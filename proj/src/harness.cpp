#include "deepsc/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace deepsc {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

bool is_deterministic(const std::string& kind) {
  return kind == "black-scholes" || kind == "example1" || kind == "example2" ||
         kind == "example3";
}

bool runs_primal(SolverKind k) {
  return k == SolverKind::Primal2Bsde || k == SolverKind::Both2Bsde || k == SolverKind::All;
}
bool runs_dual(SolverKind k) {
  return k == SolverKind::Dual2Bsde || k == SolverKind::Both2Bsde || k == SolverKind::All;
}
bool runs_smp(SolverKind k) { return k == SolverKind::Smp || k == SolverKind::All; }

double simpson(const std::vector<double>& f, double h) {
  double s = f.front() + f.back();
  for (std::size_t i = 1; i + 1 < f.size(); ++i) s += (i % 2 ? 4.0 : 2.0) * f[i];
  return s * h / 3.0;
}

// Trains one 2BSDE solver and evaluates it on the eval stream. Returns the
// divergence message, empty on success.
std::string run_bsde(const ExperimentConfig& c, bool dual, SolverOutcome& out) {
  const auto problem = build_problem(c, dual);
  Bsde2Solver solver(*problem, bsde_config(c));
  out.ran = true;
  out.trace_name = c.name + (dual ? "_dual" : "_primal");
  const auto t0 = Clock::now();
  try {
    out.trace = solver.train();
  } catch (const DivergenceError& e) {
    out.trace = e.trace();
    out.seconds = since(t0);
    return std::string(dual ? "dual" : "primal") + " training diverged: " + e.what();
  }
  out.value = solver.value_at_zero();
  const IncrementGenerator gen(c.seeds.eval, c.antithetic, c.eval_substeps);
  const McEstimate est = solver.evaluate(gen, c.eval_paths);
  out.mc = est.mean;
  out.mc_se = est.se;
  out.final_loss = solver.l1_on(gen.path_batch(0, 4096, c.N, problem->noise_dim()));
  if (!out.trace.rows.empty()) out.final_l3 = out.trace.rows.back().l3;
  out.seconds = since(t0);
  return {};
}

json trace_rows_json(const SolverOutcome& o) {
  return {{"ran", o.ran},
          {"value", o.value},
          {"mc", o.mc},
          {"mc_se", o.mc_se},
          {"final_loss", o.final_loss},
          {"final_l3", o.final_l3},
          {"seconds", o.seconds},
          {"trace_name", o.trace_name}};
}

SolverOutcome outcome_from_json(const json& j) {
  SolverOutcome o;
  o.ran = j.at("ran");
  o.value = j.at("value");
  o.mc = j.at("mc");
  o.mc_se = j.at("mc_se");
  o.final_loss = j.at("final_loss");
  o.final_l3 = j.at("final_l3");
  o.seconds = j.at("seconds");
  o.trace_name = j.at("trace_name");
  return o;
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(6);
  s << x;
  return s.str();
}

}  // namespace

ConstraintSet constraint_set(const ExperimentConfig& c) {
  const int m = c.market.m;
  const std::string& k = c.constraint.kind;
  if (k == "full") return ConstraintSet::full(m);
  if (k == "cone") return ConstraintSet::cone(m);
  if (k == "ball") return ConstraintSet::ball(m, c.constraint.radius);
  if (k == "bond") return ConstraintSet::box(Vector::Zero(m), Vector::Zero(m));
  throw std::invalid_argument("unknown constraint: " + k);
}

HestonParams heston_params(const ExperimentConfig& c) { return c.market.heston; }

PathDepVolParams pathdep_params(const ExperimentConfig& c) {
  PathDepVolParams p;
  p.sigma_low = c.market.sigma_low;
  p.sigma_high = c.market.sigma_high;
  p.m = c.market.m;
  p.r = c.market.r;
  p.mu = c.market.mu;
  return p;
}

std::unique_ptr<ControlProblem> build_problem(const ExperimentConfig& c, bool dual) {
  if (c.market.kind == "heston") {
    if (dual)
      return std::make_unique<HestonDualProblem>(heston_params(c), c.market.m, c.utility, c.x0);
    return std::make_unique<HestonPrimalProblem>(heston_params(c), c.market.m, c.utility, c.x0);
  }
  MarketCoefficients mc = market_coefficients(c);
  if (dual)
    return std::make_unique<DualWealthProblem>(std::move(mc), c.utility, constraint_set(c), c.x0);
  WealthOptions opt;
  opt.ball_rule =
      c.constraint.ball_rule == "exp-rescale" ? BallRule::ExpRescale : BallRule::Radial;
  opt.soft_constraint = c.constraint.soft;
  opt.penalty.weight = c.constraint.penalty_weight;
  return std::make_unique<PrimalWealthProblem>(std::move(mc), c.utility, constraint_set(c), c.x0,
                                               opt);
}

std::unique_ptr<SmpMarket> build_smp_market(const ExperimentConfig& c) {
  if (c.market.kind == "heston")
    return std::make_unique<HestonSmpMarket>(heston_params(c), c.market.m);
  if (c.market.kind == "pathdep") return std::make_unique<PathDepSmpMarket>(pathdep_params(c));
  return std::make_unique<DeterministicSmpMarket>(market_coefficients(c));
}

Bsde2Config bsde_config(const ExperimentConfig& c) {
  Bsde2Config b;
  b.T = c.T;
  b.N = c.N;
  b.iterations = c.iterations;
  b.batch = c.batch;
  b.beta = c.beta;
  b.schedule = c.schedule;
  b.schedule.total = c.iterations;
  b.optimizer = nn::optimizer_from_name(c.optimizer);
  b.activation = ad::activation_from_name(c.activation);
  b.layers = c.layers;
  b.hidden = c.hidden;
  b.init_std = c.init_std;
  b.init_seed = c.seeds.init;
  b.path_seed = c.seeds.path;
  b.antithetic = c.antithetic;
  b.warm_start = c.warm_start;
  b.control_warmup = c.control_warmup;
  return b;
}

SmpConfig smp_config(const ExperimentConfig& c) {
  SmpConfig s;
  s.T = c.T;
  s.N = c.N;
  s.iterations = c.iterations;
  s.batch = c.batch;
  s.schedule = c.schedule;
  s.schedule.bsde_rate_initial = c.smp_rate;
  s.schedule.control_rate_initial = c.smp_rate;
  s.schedule.total = c.iterations;
  s.optimizer = nn::optimizer_from_name(c.optimizer);
  s.activation = ad::activation_from_name(c.activation);
  s.layers = c.layers;
  s.hidden = c.hidden;
  s.init_std = c.smp_init_std;
  s.init_seed = c.seeds.init;
  s.path_seed = c.seeds.path;
  s.antithetic = c.antithetic;
  s.x0 = c.x0;
  return s;
}

// ---------------------------------------------------------------------------

const char* solver_name(SolverKind k) {
  switch (k) {
    case SolverKind::Primal2Bsde: return "primal-2bsde";
    case SolverKind::Dual2Bsde: return "dual-2bsde";
    case SolverKind::Both2Bsde: return "both-2bsde";
    case SolverKind::Smp: return "smp";
    case SolverKind::All: return "all";
  }
  return "?";
}

SolverKind solver_from_name(const std::string& name) {
  for (SolverKind k : {SolverKind::Primal2Bsde, SolverKind::Dual2Bsde, SolverKind::Both2Bsde,
                       SolverKind::Smp, SolverKind::All})
    if (name == solver_name(k)) return k;
  throw std::invalid_argument("unknown solver: " + name);
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (name.empty()) fail("name must not be empty");
  if (!(is_deterministic(market.kind) || market.kind == "heston" || market.kind == "pathdep"))
    fail("unknown market kind: " + market.kind);
  if (market.m < 1) fail("market.m must be >= 1");
  if (!(market.sigma > 0.0)) fail("market.sigma must be positive");
  if (market.kind == "heston") market.heston.validate();
  if (market.kind == "pathdep") pathdep_params(*this).validate();
  if (utility.kind == UtilityKind::Power && !(utility.p > 0.0 && utility.p < 1.0))
    fail("power exponent must lie in (0, 1)");
  const std::string& ck = constraint.kind;
  if (ck != "full" && ck != "cone" && ck != "ball" && ck != "bond")
    fail("unknown constraint: " + ck);
  if (ck == "ball" && !(constraint.radius > 0.0)) fail("ball radius must be positive");
  if (constraint.ball_rule != "radial" && constraint.ball_rule != "exp-rescale")
    fail("unknown ball_rule: " + constraint.ball_rule);
  if (constraint.soft && ck != "ball") fail("soft penalties apply to ball constraints only");
  if (!(constraint.penalty_weight > 0.0)) fail("penalty_weight must be positive");
  if (!(T > 0.0)) fail("T must be positive");
  if (N < 1) fail("N must be >= 1");
  if (!(x0 > 0.0)) fail("x0 must be positive");
  if (iterations < 1) fail("iterations must be >= 1");
  if (batch < 2) fail("batch must be >= 2");
  if (antithetic && batch % 2) fail("antithetic sampling needs an even batch");
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (layers < 1) fail("layers must be >= 1");
  if (hidden == 0 || hidden < -1) fail("hidden must be positive or -1");
  if (!(init_std > 0.0) || !(smp_init_std > 0.0)) fail("init_std must be positive");
  if (!(smp_rate > 0.0)) fail("smp_rate must be positive");
  if (!(schedule.bsde_rate_initial > 0.0) || !(schedule.control_rate_initial > 0.0))
    fail("learning rates must be positive");
  if (!(schedule.decay_factor >= 1.0)) fail("decay_factor must be >= 1");
  if (schedule.decays < 0) fail("decays must be >= 0");
  nn::optimizer_from_name(optimizer);
  ad::activation_from_name(activation);
  if (eval_paths < 2) fail("eval_paths must be >= 2");
  if (eval_substeps < 1) fail("eval_substeps must be >= 1");
  if (error_metric != "v0" && error_metric != "mc") fail("error_metric must be v0 or mc");
  if (tolerance && !(*tolerance > 0.0)) fail("tolerance must be positive");
  if (control_warmup < 0 || control_warmup >= iterations)
    fail("control_warmup must lie in [0, iterations)");
  if (parallelism < 1) fail("parallelism must be >= 1");

  // combinations
  const bool bsde = runs_primal(solver) || runs_dual(solver);
  if (bsde && !(schedule.control_rate_initial < schedule.bsde_rate_initial))
    fail("the control learning rate must be below the BSDE rate");
  if (market.kind == "pathdep" && bsde)
    fail("the path-dependent market is non-Markovian; only the smp solver applies");
  if (market.kind == "heston" && bsde && ck != "full")
    fail("the Heston 2BSDE problems support the unconstrained set only");
  if (runs_smp(solver) && constraint.soft)
    fail("soft constraint penalties are a 2BSDE-only feature");
  if (runs_smp(solver) && constraint.ball_rule != "radial")
    fail("ball_rule is a 2BSDE-only feature");
  if (solver == SolverKind::Smp && control_warmup > 0)
    fail("control_warmup is a 2BSDE-only feature");

  for (int n : sweep.N)
    if (n < 1) fail("sweep.N entries must be >= 1");
  for (double t : sweep.T)
    if (!(t > 0.0)) fail("sweep.T entries must be positive");
  for (int d : sweep.m)
    if (d < 1) fail("sweep.m entries must be >= 1");
  for (const auto& a : sweep.activation) ad::activation_from_name(a);
  for (const auto& o : sweep.optimizer) nn::optimizer_from_name(o);
}

json ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["market"] = {{"kind", market.kind},
                 {"m", market.m},
                 {"r", market.r},
                 {"mu", market.mu},
                 {"sigma", market.sigma},
                 {"sigma_low", market.sigma_low},
                 {"sigma_high", market.sigma_high},
                 {"heston",
                  {{"r", market.heston.r},
                   {"A", market.heston.A},
                   {"kappa", market.heston.kappa},
                   {"long_run", market.heston.long_run},
                   {"xi", market.heston.xi},
                   {"rho", market.heston.rho},
                   {"v0", market.heston.v0}}}};
  j["utility"] = {{"kind", utility.name()}, {"p", utility.p}};
  j["constraint"] = {{"kind", constraint.kind},
                     {"radius", constraint.radius},
                     {"soft", constraint.soft},
                     {"penalty_weight", constraint.penalty_weight},
                     {"ball_rule", constraint.ball_rule}};
  j["solver"] = solver_name(solver);
  j["T"] = T;
  j["N"] = N;
  j["x0"] = x0;
  j["iterations"] = iterations;
  j["batch"] = batch;
  j["beta"] = beta;
  j["schedule"] = {{"bsde_rate", schedule.bsde_rate_initial},
                   {"control_rate", schedule.control_rate_initial},
                   {"decay_factor", schedule.decay_factor},
                   {"decays", schedule.decays}};
  j["smp_rate"] = smp_rate;
  j["optimizer"] = optimizer;
  j["activation"] = activation;
  j["layers"] = layers;
  j["hidden"] = hidden;
  j["init_std"] = init_std;
  j["smp_init_std"] = smp_init_std;
  j["antithetic"] = antithetic;
  j["warm_start"] = warm_start;
  j["control_warmup"] = control_warmup;
  j["seeds"] = {{"coefficient", seeds.coefficient},
                {"init", seeds.init},
                {"path", seeds.path},
                {"eval", seeds.eval}};
  j["eval_paths"] = eval_paths;
  j["eval_substeps"] = eval_substeps;
  j["error_metric"] = error_metric;
  j["tolerance"] = tolerance ? json(*tolerance) : json(nullptr);
  j["sweep"] = {{"N", sweep.N},
                {"T", sweep.T},
                {"activation", sweep.activation},
                {"optimizer", sweep.optimizer},
                {"m", sweep.m}};
  j["parallelism"] = parallelism;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    check_keys(j,
               {"name", "market", "utility", "constraint", "solver", "T", "N", "x0",
                "iterations", "batch", "beta", "schedule", "smp_rate", "optimizer",
                "activation", "layers", "hidden", "init_std", "smp_init_std", "antithetic",
                "warm_start", "control_warmup", "seeds", "eval_paths", "eval_substeps",
                "error_metric", "tolerance", "sweep", "parallelism"},
               "config");
    read(j, "name", c.name);
    if (j.contains("market")) {
      const json& m = j.at("market");
      check_keys(m, {"kind", "m", "r", "mu", "sigma", "sigma_low", "sigma_high", "heston"},
                 "market");
      read(m, "kind", c.market.kind);
      read(m, "m", c.market.m);
      read(m, "r", c.market.r);
      read(m, "mu", c.market.mu);
      read(m, "sigma", c.market.sigma);
      read(m, "sigma_low", c.market.sigma_low);
      read(m, "sigma_high", c.market.sigma_high);
      if (m.contains("heston")) {
        const json& h = m.at("heston");
        check_keys(h, {"r", "A", "kappa", "long_run", "xi", "rho", "v0"}, "market.heston");
        read(h, "r", c.market.heston.r);
        read(h, "A", c.market.heston.A);
        read(h, "kappa", c.market.heston.kappa);
        read(h, "long_run", c.market.heston.long_run);
        read(h, "xi", c.market.heston.xi);
        read(h, "rho", c.market.heston.rho);
        read(h, "v0", c.market.heston.v0);
      }
    }
    if (j.contains("utility")) {
      const json& u = j.at("utility");
      std::string kind = "power";
      double p = 0.5;
      if (u.is_string()) {
        kind = u.get<std::string>();
      } else {
        check_keys(u, {"kind", "p"}, "utility");
        read(u, "kind", kind);
        read(u, "p", p);
      }
      if (kind == "power" && !(p > 0.0 && p < 1.0))
        throw std::invalid_argument("power exponent must lie in (0, 1)");
      c.utility = utility_from_name(kind, p);
    }
    if (j.contains("constraint")) {
      const json& k = j.at("constraint");
      if (k.is_string()) {
        c.constraint.kind = k.get<std::string>();
      } else {
        check_keys(k, {"kind", "radius", "soft", "penalty_weight", "ball_rule"}, "constraint");
        read(k, "kind", c.constraint.kind);
        read(k, "radius", c.constraint.radius);
        read(k, "soft", c.constraint.soft);
        read(k, "penalty_weight", c.constraint.penalty_weight);
        read(k, "ball_rule", c.constraint.ball_rule);
      }
    }
    if (j.contains("solver")) c.solver = solver_from_name(j.at("solver").get<std::string>());
    read(j, "T", c.T);
    read(j, "N", c.N);
    read(j, "x0", c.x0);
    read(j, "iterations", c.iterations);
    read(j, "batch", c.batch);
    read(j, "beta", c.beta);
    if (j.contains("schedule")) {
      const json& s = j.at("schedule");
      check_keys(s, {"bsde_rate", "control_rate", "decay_factor", "decays"}, "schedule");
      read(s, "bsde_rate", c.schedule.bsde_rate_initial);
      read(s, "control_rate", c.schedule.control_rate_initial);
      read(s, "decay_factor", c.schedule.decay_factor);
      read(s, "decays", c.schedule.decays);
    }
    read(j, "smp_rate", c.smp_rate);
    read(j, "optimizer", c.optimizer);
    read(j, "activation", c.activation);
    read(j, "layers", c.layers);
    read(j, "hidden", c.hidden);
    read(j, "init_std", c.init_std);
    read(j, "smp_init_std", c.smp_init_std);
    read(j, "antithetic", c.antithetic);
    read(j, "warm_start", c.warm_start);
    read(j, "control_warmup", c.control_warmup);
    if (j.contains("seeds")) {
      const json& s = j.at("seeds");
      check_keys(s, {"coefficient", "init", "path", "eval"}, "seeds");
      read(s, "coefficient", c.seeds.coefficient);
      read(s, "init", c.seeds.init);
      read(s, "path", c.seeds.path);
      read(s, "eval", c.seeds.eval);
    }
    read(j, "eval_paths", c.eval_paths);
    read(j, "eval_substeps", c.eval_substeps);
    read(j, "error_metric", c.error_metric);
    if (j.contains("tolerance") && !j.at("tolerance").is_null())
      c.tolerance = j.at("tolerance").get<double>();
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      check_keys(s, {"N", "T", "activation", "optimizer", "m"}, "sweep");
      read(s, "N", c.sweep.N);
      read(s, "T", c.sweep.T);
      read(s, "activation", c.sweep.activation);
      read(s, "optimizer", c.sweep.optimizer);
      read(s, "m", c.sweep.m);
    }
    read(j, "parallelism", c.parallelism);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + " does not parse: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"example1-nonhara",       "example2-cone-merton", "example3-ball-log",
          "heston-power",           "heston-power-nsweep",  "heston-smp",
          "heston-nonhara-10stock", "pathdep-power",        "testbed-merton",
          "testbed-merton-tsweep"};
}

ExperimentConfig preset(const std::string& name, bool full) {
  ExperimentConfig c;
  c.name = name;
  if (name == "example1-nonhara") {
    c.market.kind = "example1";
    c.market.m = 5;
    c.utility = UtilitySpec::nonhara();
    c.solver = SolverKind::Both2Bsde;
    c.T = 0.5;
    c.N = full ? 50 : 20;
    c.iterations = full ? 10000 : 6000;
    c.tolerance = 0.005;
  } else if (name == "example2-cone-merton") {
    c.market.kind = "example2";
    c.market.m = 50;
    c.constraint.kind = "cone";
    c.solver = SolverKind::Both2Bsde;
    c.T = 0.5;
    c.N = 10;
    c.iterations = full ? 100000 : 2000;
    c.schedule.decays = 1;
    c.eval_paths = 1 << 16;
    if (full) c.tolerance = 0.005;
  } else if (name == "example3-ball-log") {
    c.market.kind = "example3";
    c.market.m = 20;
    c.market.mu = 0.07;
    c.utility = UtilitySpec::log();
    c.constraint.kind = "ball";
    c.constraint.radius = 1.0;
    c.constraint.soft = true;
    c.solver = SolverKind::Both2Bsde;
    c.T = 0.5;
    c.N = 10;
    c.x0 = 5.0;
    c.iterations = full ? 20000 : 2000;
    c.eval_paths = 1 << 16;
    if (full) c.tolerance = 0.005;
  } else if (name == "heston-power") {
    c.market.kind = "heston";
    c.solver = SolverKind::Both2Bsde;
    c.T = 0.2;
    c.N = 5;
    c.iterations = full ? 20000 : 5000;
    c.tolerance = 0.003;
  } else if (name == "heston-power-nsweep") {
    c.market.kind = "heston";
    c.solver = SolverKind::Primal2Bsde;
    c.T = 0.5;
    c.N = 5;
    c.iterations = full ? 20000 : 10000;
    // Init seeds 1, 2 and 4 trip the divergence guard at N = 20: one path
    // ends near zero wealth, where U'(x) = x^-1/2 blows up the Z mismatch.
    c.seeds.init = 3;
    c.sweep.N = {5, 10, 20};
  } else if (name == "heston-smp") {
    c.market.kind = "heston";
    c.solver = SolverKind::Smp;
    c.T = 0.2;
    c.N = 5;
    c.iterations = full ? 10000 : 2000;
    c.tolerance = 0.001;
  } else if (name == "heston-nonhara-10stock") {
    c.market.kind = "heston";
    c.market.m = 10;
    c.utility = UtilitySpec::nonhara();
    c.solver = SolverKind::All;
    c.T = 0.2;
    // No oracle. Controls start small and train after a BSDE-only phase:
    // with the default init the non-HARA terminal gradient explodes on
    // low-wealth paths. At N = 5 the Euler adjoint crosses zero too often
    // for the SMP lower bound to mean anything.
    c.N = 20;
    c.iterations = full ? 10000 : 1000;
    c.control_warmup = c.iterations * 3 / 10;
    c.init_std = 0.05;
    c.error_metric = "mc";
    c.eval_paths = 1 << 16;
  } else if (name == "pathdep-power") {
    c.market.kind = "pathdep";
    c.market.m = 2;
    c.constraint.kind = "cone";
    c.solver = SolverKind::Smp;
    c.T = 0.2;
    c.N = 5;
    c.iterations = full ? 10000 : 2000;
  } else if (name == "testbed-merton") {
    c.market.kind = "example1";
    c.market.m = 10;
    c.solver = SolverKind::Primal2Bsde;
    c.T = 1.0;
    c.N = 20;
    c.iterations = full ? 20000 : 2000;
    c.error_metric = "mc";
    c.sweep.activation = {"relu", "softplus", "tanh", "sigmoid"};
    c.sweep.optimizer = {"sgd", "adam", "adagrad", "momentum"};
  } else if (name == "testbed-merton-tsweep") {
    c.market.kind = "example1";
    c.market.m = 10;
    c.solver = SolverKind::Primal2Bsde;
    c.T = 1.0;
    c.N = 5;
    c.iterations = full ? 40000 : 20000;
    c.error_metric = "mc";
    c.eval_paths = 1 << 20;
    c.sweep.T = {0.2, 0.4, 0.6, 0.8, 1.0};
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

MarketCoefficients market_coefficients(const ExperimentConfig& c) {
  const auto& m = c.market;
  if (m.kind == "black-scholes")
    return MarketCoefficients::constant(m.r, Vector::Constant(m.m, m.mu),
                                        m.sigma * Matrix::Identity(m.m, m.m));
  if (m.kind == "example1") return example1_market(m.m, c.seeds.coefficient, m.r, m.mu);
  if (m.kind == "example2") return example2_market(m.m, c.seeds.coefficient, m.r);
  if (m.kind == "example3") return example3_market(m.m, c.seeds.coefficient, m.r, m.mu);
  throw std::invalid_argument("market '" + m.kind + "' has no deterministic coefficients");
}

std::optional<ClosedFormSolution> oracle_for(const ExperimentConfig& c) {
  const std::string& ck = c.constraint.kind;
  if (c.market.kind == "heston") {
    if (c.utility.kind != UtilityKind::Power || ck != "full") return std::nullopt;
    // independent stocks: the exponents add up, the interest term counts once
    const HestonParams& h = c.market.heston;
    const double p = c.utility.p;
    const RiccatiPair rp = heston_riccati(h, p, c.T);
    const double one = rp.C[0] + rp.D[0] * h.v0;
    const double expo = c.market.m * one - (c.market.m - 1) * p * h.r * c.T;
    ClosedFormSolution s;
    s.value = std::pow(c.x0, p) / p * std::exp(expo);
    s.y_hat = std::pow(c.x0, p - 1.0) * std::exp(expo);
    s.dual_value = s.value - c.x0 * s.y_hat;
    s.source = "Heston Riccati";
    return s;
  }
  if (!is_deterministic(c.market.kind)) return std::nullopt;
  const MarketCoefficients mc = market_coefficients(c);
  const int grid = 200;
  const double h = c.T / grid;
  if (ck == "bond" && c.utility.kind != UtilityKind::Power) {
    // all wealth in the bond
    std::vector<double> r(grid + 1);
    for (int i = 0; i <= grid; ++i) r[i] = mc.r(h * i);
    const double x = c.x0 * std::exp(simpson(r, h));
    const Derivs u = u_eval(c.utility, x);
    ClosedFormSolution s;
    s.value = u.value;
    s.y_hat = u.d1 * x / c.x0;  // u_x(0, x0)
    s.dual_value = s.value - c.x0 * s.y_hat;
    s.source = "bond only";
    return s;
  }
  switch (c.utility.kind) {
    case UtilityKind::Power: {
      if (ck == "ball") return std::nullopt;
      const MertonDualSet set = ck == "full"   ? MertonDualSet::Zero
                                : ck == "cone" ? MertonDualSet::Cone
                                               : MertonDualSet::Free;
      return merton_cone_solution(mc, c.utility.p, c.x0, c.T, grid, set).sol;
    }
    case UtilityKind::Log: {
      if (ck == "ball") return log_ball_solution(mc, c.constraint.radius, c.x0, c.T, grid).sol;
      if (ck == "full") {
        ClosedFormSolution s = log_ball_solution(mc, 1e300, c.x0, c.T, grid).sol;
        s.source = "log utility, unconstrained";
        return s;
      }
      // cone: the dual minimiser lies in the polar cone where the support vanishes
      const MertonConeSolution mcs =
          merton_cone_solution(mc, 0.5, c.x0, c.T, grid, MertonDualSet::Cone);
      std::vector<double> f(grid + 1);
      for (int i = 0; i <= grid; ++i) f[i] = mc.r(mcs.t[i]) + 0.5 * mcs.theta_hat_sq[i];
      ClosedFormSolution s;
      s.y_hat = 1.0 / c.x0;
      s.value = std::log(c.x0) + simpson(f, h);
      s.dual_value = s.value - 1.0;
      s.source = "log utility, cone constraint";
      return s;
    }
    case UtilityKind::NonHara: {
      if (ck != "full") return std::nullopt;
      try {
        return nonhara_value(mc, c.x0, c.T).solution();
      } catch (const std::invalid_argument&) {
        return std::nullopt;  // time-varying coefficients
      }
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

json SolverOutcome::to_json() const { return trace_rows_json(*this); }

std::optional<double> ResultRecord::headline_error() const {
  for (const char* k : {"primal", "dual", "smp_mid"})
    if (rel_err.contains(k)) return std::abs(rel_err.at(k).get<double>());
  return std::nullopt;
}

json ResultRecord::to_json() const {
  json j;
  j["config"] = config.to_json();
  j["primal"] = primal.to_json();
  j["dual"] = dual.to_json();
  j["smp"] = smp ? smp->to_json() : json(nullptr);
  j["smp_seconds"] = smp_seconds;
  j["smp_loss_q"] = smp_loss_q;
  j["oracle"] = oracle ? json(*oracle) : json(nullptr);
  j["oracle_source"] = oracle_source;
  j["rel_err"] = rel_err;
  j["checks"] = checks;
  j["seconds"] = seconds;
  j["passed"] = passed;
  j["failures"] = failures;
  j["error"] = error;
  return j;
}

ResultRecord ResultRecord::from_json(const json& j) {
  ResultRecord r;
  r.config = ExperimentConfig::from_json(j.at("config"));
  r.primal = outcome_from_json(j.at("primal"));
  r.dual = outcome_from_json(j.at("dual"));
  if (!j.at("smp").is_null()) r.smp = ValueBracket::from_json(j.at("smp"));
  r.smp_seconds = j.at("smp_seconds");
  r.smp_loss_q = j.at("smp_loss_q");
  if (!j.at("oracle").is_null()) r.oracle = j.at("oracle").get<double>();
  r.oracle_source = j.at("oracle_source");
  r.rel_err = j.at("rel_err");
  r.checks = j.at("checks");
  r.seconds = j.at("seconds");
  r.passed = j.at("passed");
  r.failures = j.at("failures").get<std::vector<std::string>>();
  r.error = j.at("error");
  return r;
}

ResultRecord run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  ResultRecord rec;
  rec.config = cfg;
  if (const auto o = oracle_for(cfg)) {
    rec.oracle = o->value;
    rec.oracle_source = o->source;
  }
  auto abort = [&](const std::string& msg) {
    rec.error = msg;
    rec.passed = false;
    rec.failures.push_back(msg);
  };

  if (runs_primal(cfg.solver)) {
    const std::string err = run_bsde(cfg, false, rec.primal);
    if (!err.empty()) abort(err);
  }
  if (rec.error.empty() && runs_dual(cfg.solver)) {
    const std::string err = run_bsde(cfg, true, rec.dual);
    if (!err.empty()) abort(err);
  }
  if (rec.error.empty() && runs_smp(cfg.solver)) {
    const auto market = build_smp_market(cfg);
    SmpSolver solver(*market, constraint_set(cfg), cfg.utility, smp_config(cfg));
    const auto ts = Clock::now();
    try {
      rec.smp_trace = solver.train();
      if (!rec.smp_trace.rows.empty()) rec.smp_loss_q = rec.smp_trace.rows.back().loss_q;
      rec.smp = solver.bounds(IncrementGenerator(cfg.seeds.eval, true, cfg.eval_substeps),
                              cfg.eval_paths);
    } catch (const SmpDivergenceError& e) {
      rec.smp_trace = e.trace();
      abort(std::string("smp training diverged: ") + e.what());
    }
    rec.smp_seconds = since(ts);
  }

  const bool mc = cfg.error_metric == "mc";
  auto figure = [&](const SolverOutcome& o) { return mc ? o.mc : o.value; };
  if (rec.error.empty()) {
    if (rec.oracle) {
      const double o = *rec.oracle;
      auto rel = [&](double v) { return (v - o) / std::abs(o); };
      if (rec.primal.ran) rec.rel_err["primal"] = rel(figure(rec.primal));
      if (rec.dual.ran) rec.rel_err["dual"] = rel(figure(rec.dual));
      if (rec.smp) {
        rec.rel_err["smp_low"] = rel(rec.smp->u_low);
        rec.rel_err["smp_high"] = rel(rec.smp->u_high);
        rec.rel_err["smp_mid"] = rel(rec.smp->midpoint());
      }
      if (cfg.tolerance) {
        for (const char* k : {"primal", "dual", "smp_mid"}) {
          if (!rec.rel_err.contains(k)) continue;
          const double e = std::abs(rec.rel_err.at(k).get<double>());
          if (e > *cfg.tolerance)
            rec.failures.push_back(std::string(k) + " relative error " + fmt(e) +
                                   " exceeds tolerance " + fmt(*cfg.tolerance));
        }
      }
    }
    if (rec.primal.ran && rec.dual.ran) {
      // weak duality: primal <= dual up to Monte Carlo error
      const double slack =
          3.0 * std::hypot(rec.primal.mc_se, rec.dual.mc_se) +
          (cfg.tolerance ? *cfg.tolerance * std::abs(figure(rec.dual)) : 0.0);
      const bool ok = figure(rec.primal) <= figure(rec.dual) + slack;
      rec.checks["primal_le_dual"] = ok;
      if (!ok && cfg.tolerance)
        rec.failures.push_back("primal value " + fmt(figure(rec.primal)) + " exceeds dual " +
                               fmt(figure(rec.dual)));
    }
    if (rec.smp) {
      const ValueBracket& b = *rec.smp;
      rec.checks["smp_low_le_high"] =
          b.u_low <= b.u_high + 3.0 * std::hypot(b.se_low, b.se_high);
      if (rec.primal.ran && rec.dual.ran) {
        const double se = 3.0 * std::hypot(rec.primal.mc_se, rec.dual.mc_se) +
                          3.0 * std::hypot(b.se_low, b.se_high);
        rec.checks["primal_le_smp_mid_le_dual"] =
            figure(rec.primal) <= b.midpoint() + se && b.midpoint() <= figure(rec.dual) + se;
      }
    }
    rec.passed = rec.failures.empty();
  }
  rec.seconds = since(t0);
  return rec;
}

std::vector<ResultRecord> run_many(const std::vector<ExperimentConfig>& cfgs,
                                   int parallelism) {
  std::vector<ResultRecord> out(cfgs.size());
  std::vector<std::exception_ptr> errs(cfgs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cfgs.size();) {
      try {
        out[i] = run_experiment(cfgs[i]);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(parallelism, static_cast<int>(cfgs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("slope fit needs two or more matching points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0))
      throw std::invalid_argument("slope fit needs positive values");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw std::invalid_argument("slope fit needs distinct x values");
  return (n * sxy - sx * sy) / den;
}

json ConvergenceResult::to_json() const {
  return {{"axis", axis}, {"points", points}, {"errors", errors}, {"slope", slope}};
}

ConvergenceResult convergence_study(const ExperimentConfig& cfg) {
  ConvergenceResult res;
  const bool byN = !cfg.sweep.N.empty();
  if (byN == !cfg.sweep.T.empty())
    throw std::invalid_argument("convergence study needs exactly one of sweep.N, sweep.T");
  res.axis = byN ? "N" : "T";
  std::vector<ExperimentConfig> cfgs;
  const std::size_t n = byN ? cfg.sweep.N.size() : cfg.sweep.T.size();
  if (n < 3) throw std::invalid_argument("convergence study needs at least 3 axis points");
  for (std::size_t i = 0; i < n; ++i) {
    ExperimentConfig c = cfg;
    c.sweep = {};
    if (byN) {
      c.N = cfg.sweep.N[i];
      c.name = cfg.name + "_N" + std::to_string(c.N);
      res.points.push_back(c.N);
    } else {
      c.T = cfg.sweep.T[i];
      c.name = cfg.name + "_T" + fmt(c.T);
      res.points.push_back(c.T);
    }
    if (!oracle_for(c)) throw std::invalid_argument("convergence study needs an oracle");
    cfgs.push_back(std::move(c));
  }
  res.records = run_many(cfgs, cfg.parallelism);
  for (const auto& r : res.records) {
    const auto e = r.headline_error();
    if (!e) throw std::runtime_error("sweep point " + r.config.name + " produced no error");
    res.errors.push_back(std::max(*e, std::numeric_limits<double>::min()));
  }
  res.slope = loglog_slope(res.points, res.errors);
  return res;
}

json MethodologyResult::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"variant", r.variant}, {"rel_err", r.rel_err}, {"seconds", r.seconds}});
  return {{"axis", axis}, {"rows", rows_j}};
}

MethodologyResult methodology_sweep(const ExperimentConfig& cfg) {
  MethodologyResult res;
  std::vector<ExperimentConfig> cfgs;
  std::vector<std::string> labels;
  std::vector<std::string> axes;
  auto add = [&](const std::string& label, ExperimentConfig c) {
    c.sweep = {};
    c.name = cfg.name + "_" + label;
    labels.push_back(label);
    cfgs.push_back(std::move(c));
  };
  if (!cfg.sweep.activation.empty()) axes.push_back("activation");
  for (const auto& a : cfg.sweep.activation) {
    ExperimentConfig c = cfg;
    c.activation = a;
    add("activation=" + a, c);
  }
  if (!cfg.sweep.optimizer.empty()) axes.push_back("optimizer");
  for (const auto& o : cfg.sweep.optimizer) {
    ExperimentConfig c = cfg;
    c.optimizer = o;
    add("optimizer=" + o, c);
  }
  if (!cfg.sweep.m.empty()) axes.push_back("m");
  for (int m : cfg.sweep.m) {
    ExperimentConfig c = cfg;
    c.market.m = m;
    add("m=" + std::to_string(m), c);
  }
  if (cfgs.empty())
    throw std::invalid_argument("methodology sweep needs activation, optimizer or m axes");
  for (std::size_t i = 0; i < axes.size(); ++i) res.axis += (i ? "," : "") + axes[i];
  res.records = run_many(cfgs, cfg.parallelism);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto e = res.records[i].headline_error();
    res.rows.push_back({labels[i], e ? *e : std::numeric_limits<double>::quiet_NaN(),
                        res.records[i].seconds});
  }
  return res;
}

// ---------------------------------------------------------------------------

bool emit_results(const std::vector<ResultRecord>& records, const std::string& dir,
                  const json& extra) {
  const fs::path root(dir);
  fs::create_directories(root / "traces");
  bool all = true;
  json arr = json::array();
  for (const auto& r : records) {
    all = all && r.passed;
    arr.push_back(r.to_json());
    if (r.primal.ran) r.primal.trace.write_csv((root / "traces" / (r.primal.trace_name + ".csv")).string());
    if (r.dual.ran) r.dual.trace.write_csv((root / "traces" / (r.dual.trace_name + ".csv")).string());
    if (!r.smp_trace.rows.empty())
      r.smp_trace.write_csv((root / "traces" / (r.config.name + "_smp.csv")).string());
  }
  json out = extra.is_object() ? extra : json::object();
  out["records"] = arr;
  out["all_passed"] = all;
  {
    std::ofstream f(root / "results.json");
    if (!f) throw std::runtime_error("cannot write " + (root / "results.json").string());
    f << out.dump(2) << "\n";
  }
  std::ofstream t(root / "table.csv");
  if (!t) throw std::runtime_error("cannot write " + (root / "table.csv").string());
  t.precision(10);
  t << "name,solver,T,N,iterations,primal,dual,smp_low,smp_high,oracle,rel_err_primal,"
       "rel_err_dual,rel_err_smp_mid,seconds,passed\n";
  auto opt = [&](bool on, double v) {
    if (on) t << v;
    t << ",";
  };
  auto rel = [&](const ResultRecord& r, const char* k) {
    if (r.rel_err.contains(k)) t << r.rel_err.at(k).get<double>();
    t << ",";
  };
  for (const auto& r : records) {
    const bool mc = r.config.error_metric == "mc";
    t << r.config.name << "," << solver_name(r.config.solver) << "," << r.config.T << ","
      << r.config.N << "," << r.config.iterations << ",";
    opt(r.primal.ran, mc ? r.primal.mc : r.primal.value);
    opt(r.dual.ran, mc ? r.dual.mc : r.dual.value);
    opt(r.smp.has_value(), r.smp ? r.smp->u_low : 0.0);
    opt(r.smp.has_value(), r.smp ? r.smp->u_high : 0.0);
    opt(r.oracle.has_value(), r.oracle.value_or(0.0));
    rel(r, "primal");
    rel(r, "dual");
    rel(r, "smp_mid");
    t << r.seconds << "," << (r.passed ? "true" : "false") << "\n";
  }
  return all;
}

std::vector<ResultRecord> load_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const json j = json::parse(in);
  std::vector<ResultRecord> out;
  for (const auto& r : j.at("records")) out.push_back(ResultRecord::from_json(r));
  return out;
}

}  // namespace deepsc
