#pragma once

// Experiment configuration, orchestration and result emission.

#include "deepsc/benchmarks.hpp"
#include "deepsc/bsde2.hpp"
#include "deepsc/smp.hpp"

#include "json.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace deepsc {

enum class SolverKind { Primal2Bsde, Dual2Bsde, Both2Bsde, Smp, All };

const char* solver_name(SolverKind k);
SolverKind solver_from_name(const std::string& name);

struct MarketSpec {
  // black-scholes (constant mu, sigma = sigma_diag I), example1, example2,
  // example3, heston, pathdep
  std::string kind = "black-scholes";
  int m = 1;
  double r = 0.05;
  double mu = 0.06;
  double sigma = 0.2;
  HestonParams heston;
  double sigma_low = 0.3;
  double sigma_high = 0.2;
};

struct ConstraintSpec {
  std::string kind = "full";  // full, cone, ball, bond (K = {0})
  double radius = 1.0;
  bool soft = false;
  double penalty_weight = 1000.0;
  std::string ball_rule = "radial";
};

struct SweepAxes {
  std::vector<int> N;
  std::vector<double> T;
  std::vector<std::string> activation;
  std::vector<std::string> optimizer;
  std::vector<int> m;
  bool empty() const {
    return N.empty() && T.empty() && activation.empty() && optimizer.empty() && m.empty();
  }
};

struct Seeds {
  std::uint64_t coefficient = 1;
  std::uint64_t init = 1;
  std::uint64_t path = 2;
  std::uint64_t eval = 99;
};

struct ExperimentConfig {
  std::string name = "experiment";
  MarketSpec market;
  UtilitySpec utility = UtilitySpec::power(0.5);
  ConstraintSpec constraint;
  SolverKind solver = SolverKind::Primal2Bsde;
  double T = 1.0;
  int N = 10;
  double x0 = 1.0;
  long iterations = 1000;
  int batch = 64;
  double beta = 0.5;
  nn::LearningSchedule schedule;
  double smp_rate = 1e-2;
  std::string optimizer = "adam";
  std::string activation = "relu";
  int layers = 4;
  int hidden = -1;
  double init_std = 0.3;
  double smp_init_std = 0.01;
  bool antithetic = true;
  bool warm_start = true;
  Seeds seeds;
  long eval_paths = 1 << 18;
  int eval_substeps = 1;
  // Which primal/dual figure the error is measured on: v0 (the trained
  // initial value) or mc (Monte Carlo value of the trained policy).
  std::string error_metric = "v0";
  std::optional<double> tolerance;  // asserted relative error
  long control_warmup = 0;
  SweepAxes sweep;
  int parallelism = 1;  // concurrent sweep points

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

ExperimentConfig load_config(const std::string& path);

// Names of the shipped presets and their configurations. `full` selects the
// larger iteration budgets.
std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name, bool full = false);

struct SolverOutcome {
  bool ran = false;
  double value = 0.0;  // v0 (plus y0 x0 for the dual)
  double mc = 0.0;
  double mc_se = 0.0;
  double final_loss = 0.0;  // L1
  double final_l3 = 0.0;
  double seconds = 0.0;
  std::string trace_name;
  TrainingTrace trace;
  nlohmann::json to_json() const;
};

struct ResultRecord {
  ExperimentConfig config;
  SolverOutcome primal;
  SolverOutcome dual;
  std::optional<ValueBracket> smp;
  double smp_seconds = 0.0;
  double smp_loss_q = 0.0;
  SmpTrace smp_trace;
  std::optional<double> oracle;
  std::string oracle_source;
  nlohmann::json rel_err = nlohmann::json::object();
  // Oracle-free sanity checks, e.g. primal <= dual within MC error.
  nlohmann::json checks = nlohmann::json::object();
  double seconds = 0.0;
  bool passed = true;
  std::vector<std::string> failures;
  std::string error;  // divergence message when training aborted

  // The headline error of this record: primal when run, else dual, else the
  // SMP bracket midpoint.
  std::optional<double> headline_error() const;
  nlohmann::json to_json() const;
  static ResultRecord from_json(const nlohmann::json& j);
};

// Oracle value for the configuration when one is registered.
std::optional<ClosedFormSolution> oracle_for(const ExperimentConfig& cfg);

// Builds the market coefficients of a deterministic-market configuration.
MarketCoefficients market_coefficients(const ExperimentConfig& cfg);

// Solver inputs derived from a configuration.
ConstraintSet constraint_set(const ExperimentConfig& cfg);
HestonParams heston_params(const ExperimentConfig& cfg);
PathDepVolParams pathdep_params(const ExperimentConfig& cfg);
std::unique_ptr<ControlProblem> build_problem(const ExperimentConfig& cfg, bool dual);
std::unique_ptr<SmpMarket> build_smp_market(const ExperimentConfig& cfg);
Bsde2Config bsde_config(const ExperimentConfig& cfg);
SmpConfig smp_config(const ExperimentConfig& cfg);

ResultRecord run_experiment(const ExperimentConfig& cfg);

struct ConvergenceResult {
  std::string axis;  // "N" or "T"
  std::vector<double> points;
  std::vector<double> errors;  // |relative error|
  double slope = 0.0;
  std::vector<ResultRecord> records;
  nlohmann::json to_json() const;
};

// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

ConvergenceResult convergence_study(const ExperimentConfig& cfg);

// Runs independent configurations on up to `parallelism` threads, preserving
// order.
std::vector<ResultRecord> run_many(const std::vector<ExperimentConfig>& cfgs,
                                   int parallelism);

struct SweepRow {
  std::string variant;
  double rel_err = 0.0;
  double seconds = 0.0;
};

struct MethodologyResult {
  std::string axis;
  std::vector<SweepRow> rows;
  std::vector<ResultRecord> records;
  nlohmann::json to_json() const;
};

MethodologyResult methodology_sweep(const ExperimentConfig& cfg);

// Writes results.json, table.csv and traces/*.csv into `dir`; returns true
// when every record passed its tolerance.
bool emit_results(const std::vector<ResultRecord>& records, const std::string& dir,
                  const nlohmann::json& extra = nlohmann::json::object());
std::vector<ResultRecord> load_results(const std::string& path);

}  // namespace deepsc
