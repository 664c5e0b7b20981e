#pragma once

// Deep controlled 2BSDE solver: per-step control nets pi_i(X_i) and Hessian
// nets Gamma_i(X_i), free initial value v0 and gradient z0, trained by
// alternating a BSDE step (terminal mismatch) with a Hamiltonian step.

#include "deepsc/control_problem.hpp"
#include "deepsc/nn.hpp"

#include "json.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepsc {

struct Bsde2Config {
  double T = 1.0;
  int N = 10;
  long iterations = 1000;
  int batch = 64;
  double beta = 0.5;  // weight of the Z-terminal term in L1
  nn::LearningSchedule schedule;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  ad::Activation activation = ad::Activation::Relu;
  int layers = 4;
  int hidden = -1;  // -1: state dim + 10
  double init_std = 0.3;
  std::uint64_t init_seed = 1;
  std::uint64_t path_seed = 2;
  bool antithetic = true;
  double divergence_threshold = 1e6;
  // Start v0, z0 at g and Dg of the initial state instead of 0.
  bool warm_start = true;
  // Iterations at the start with BSDE steps only.
  long control_warmup = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TraceRow {
  long iteration = 0;
  double l1 = 0.0;
  double control_grad = 0.0;  // sum of |dL2/dtheta| over all control nets
  double l3 = 0.0;            // dual runs only
  double l3_grad = 0.0;
  double value = 0.0;
  double seconds = 0.0;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;
  void write_csv(const std::string& path) const;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainingTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const TrainingTrace& trace() const { return trace_; }

 private:
  TrainingTrace trace_;
};

struct Bsde2State {
  Matrix v0;  // 1 x 1
  Matrix z0;  // 1 x d
  bool has_y0 = false;
  Matrix y0;  // 1 x 1, dual runs
  std::vector<nn::FeedForwardNetwork> control_nets;
  std::vector<nn::FeedForwardNetwork> gamma_nets;
  nn::OptimizerState bsde_opt;
  nn::OptimizerState y0_opt;
  std::vector<nn::OptimizerState> control_opts;

  // Dimension of the BSDE parameter group: 1 + d + N rho(d, d^2).
  long bsde_parameter_count() const;

  nlohmann::json to_json() const;
  static Bsde2State from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Bsde2State load(const std::string& path);
};

// Plain (off-tape) trajectories of one batch.
struct Trajectories {
  std::vector<Matrix> X;      // N+1, k x d
  std::vector<Matrix> pi;     // N, k x m
  std::vector<Matrix> sigma;  // N, k x (d n)
  std::vector<Matrix> gamma;  // N, k x (d d), symmetrised
  std::vector<Matrix> Z;      // N+1, k x d
  std::vector<Matrix> V;      // N+1, k x 1
};

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
  long paths = 0;
};

// Mean of |V_N - g|^2 + beta |Z_N - Dg|^2 over the batch.
ad::Var loss_L1(ad::Tape& tape, ad::Var VN, ad::Var ZN, const Matrix& g,
                const Matrix& dg, double beta);
// Mean of U~(y0 * unit_YN) + y0 x0; y0 is a 1 x 1 node.
ad::Var loss_L3(ad::Tape& tape, ad::Var y0, const Matrix& unit_YN,
                const UtilitySpec& utility, double x0);

// d^2 x d^2 matrix with raw * S = (A + A')/2 row-wise.
Matrix symmetriser(int d);

class Bsde2Solver {
 public:
  Bsde2Solver(const ControlProblem& problem, Bsde2Config config);

  const Bsde2Config& config() const { return cfg_; }
  const ControlProblem& problem() const { return problem_; }
  Bsde2State& state() { return state_; }
  const Bsde2State& state() const { return state_; }

  // Runs config.iterations alternating steps. Throws DivergenceError.
  TrainingTrace train();
  TraceRow iterate(long iteration);

  // v0, plus y0 x0 for dual problems.
  double value_at_zero() const;
  Eigen::RowVectorXd initial_state() const;

  // Frozen-statistics simulation on given increments (one k x n matrix per
  // step).
  Trajectories simulate(const std::vector<Matrix>& dW) const;

  // Control-variate Monte Carlo value: mean of g(X_N) - sum sqrt(dt) Z'sigma dW
  // (plus y0 x0 for dual problems), evaluated in chunks.
  McEstimate evaluate(const IncrementGenerator& gen, long paths,
                      long chunk = 1 << 14) const;

  // Loss values on a batch without updating anything.
  double l1_on(const std::vector<Matrix>& dW) const;

 private:
  Trajectories sweep(const std::vector<Matrix>& dW, bool train_mode,
                     bool with_z);
  Matrix gamma_value(int i, const Matrix& x) const;

  const ControlProblem& problem_;
  Bsde2Config cfg_;
  Bsde2State state_;
  Matrix sym_;
  int d_, n_, m_;
  ad::ParamId gamma_block_;
};

}  // namespace deepsc
