#pragma once

// Deep SMP method: forward simulation of the dual state Y and the dual
// adjoint P2 (the implied wealth) with network-driven Q2 and dual control v,
// trained against the terminal adjoint condition and the complementarity
// condition, then bracketed by Monte Carlo.

#include "deepsc/constraints.hpp"
#include "deepsc/nn.hpp"
#include "deepsc/sde.hpp"
#include "deepsc/utilities.hpp"

#include "json.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepsc {

// Market coefficients sampled along a batch of paths at one time point.
struct MarketSnapshot {
  Eigen::VectorXd r;   // k
  Matrix sigma;        // k x (m m), row-major
  Matrix sigma_inv;    // k x (m m), row-major
  Matrix theta;        // k x m
  Matrix features;     // k x f, extra network inputs
};

// A (possibly random) market the SMP solver can only sample. Noise columns
// [0, m) drive the traded stocks; any further columns drive the hidden
// coefficient dynamics.
class SmpMarket {
 public:
  virtual ~SmpMarket() = default;
  virtual std::string name() const = 0;
  virtual int stocks() const = 0;
  virtual int noise_dim() const { return stocks(); }
  virtual int feature_dim() const { return 0; }
  virtual Matrix initial_state(Eigen::Index k) const = 0;
  virtual MarketSnapshot snapshot(double t, const Matrix& state) const = 0;
  virtual Matrix advance(double t, double dt, const Matrix& state,
                         const Matrix& dW) const = 0;
  virtual nlohmann::json describe() const = 0;
};

// Deterministic Black-Scholes coefficients.
class DeterministicSmpMarket : public SmpMarket {
 public:
  explicit DeterministicSmpMarket(MarketCoefficients c);
  std::string name() const override { return "deterministic"; }
  int stocks() const override { return c_.m; }
  Matrix initial_state(Eigen::Index k) const override { return Matrix(k, 0); }
  MarketSnapshot snapshot(double t, const Matrix& state) const override;
  Matrix advance(double, double, const Matrix& state, const Matrix&) const override {
    return state;
  }
  nlohmann::json describe() const override;

 private:
  MarketCoefficients c_;
};

// n independent Heston stocks seen as random coefficients: sigma = sqrt(v),
// theta = A sqrt(v). Noise (W^s_1..W^s_n, W^perp_1..W^perp_n); the dual uses
// gamma = 0 so Y only sees W^s. Network features are the variances.
class HestonSmpMarket : public SmpMarket {
 public:
  HestonSmpMarket(HestonParams h, int stocks = 1);
  std::string name() const override { return "heston"; }
  int stocks() const override { return n_; }
  int noise_dim() const override { return 2 * n_; }
  int feature_dim() const override { return n_; }
  Matrix initial_state(Eigen::Index k) const override;
  MarketSnapshot snapshot(double t, const Matrix& state) const override;
  Matrix advance(double t, double dt, const Matrix& state,
                 const Matrix& dW) const override;
  nlohmann::json describe() const override;

  // Variance floor used when inverting sigma on truncated paths.
  static constexpr double kVarianceFloor = 1e-12;

 private:
  HestonParams h_;
  int n_;
};

// Two-regime volatility: sigma_i = sigma_high while stock i sits at its
// running maximum, sigma_low otherwise. State (S, running max), both fed to
// the networks.
class PathDepSmpMarket : public SmpMarket {
 public:
  explicit PathDepSmpMarket(PathDepVolParams p);
  std::string name() const override { return "pathdep"; }
  int stocks() const override { return p_.m; }
  int feature_dim() const override { return 2 * p_.m; }
  Matrix initial_state(Eigen::Index k) const override;
  MarketSnapshot snapshot(double t, const Matrix& state) const override;
  Matrix advance(double t, double dt, const Matrix& state,
                 const Matrix& dW) const override;
  nlohmann::json describe() const override;

 private:
  PathDepVolParams p_;
};

struct SmpConfig {
  double T = 0.2;
  int N = 5;
  long iterations = 1000;
  int batch = 64;
  nn::LearningSchedule schedule;  // bsde_rate_initial is the rate of every group
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  ad::Activation activation = ad::Activation::Relu;
  int layers = 4;
  int hidden = -1;
  double init_std = 0.01;
  std::uint64_t init_seed = 1;
  std::uint64_t path_seed = 2;
  bool antithetic = true;
  double divergence_threshold = 1e6;
  double x0 = 1.0;

  SmpConfig() {
    schedule.bsde_rate_initial = 1e-2;
    schedule.control_rate_initial = 1e-2;
  }
  void validate() const;
  nlohmann::json to_json() const;
};

struct SmpTraceRow {
  long iteration = 0;
  double loss_y = 0.0;
  double loss_q = 0.0;
  double loss_v = 0.0;
  double y = 0.0;
  double seconds = 0.0;
};

struct SmpTrace {
  std::vector<SmpTraceRow> rows;
  void write_csv(const std::string& path) const;
};

class SmpDivergenceError : public std::runtime_error {
 public:
  SmpDivergenceError(const std::string& what, SmpTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const SmpTrace& trace() const { return trace_; }

 private:
  SmpTrace trace_;
};

struct SmpState {
  Matrix y;  // 1 x 1
  std::vector<nn::FeedForwardNetwork> q_nets;
  std::vector<nn::FeedForwardNetwork> v_nets;
  nn::OptimizerState y_opt;
  nn::OptimizerState q_opt;
  nn::OptimizerState v_opt;

  nlohmann::json to_json() const;
  static SmpState from_json(const nlohmann::json& j);
};

struct SmpPaths {
  std::vector<Matrix> Y;      // N+1, k x 1
  std::vector<Matrix> P2;     // N+1, k x 1
  std::vector<Matrix> Q2;     // N, k x m
  std::vector<Matrix> v;      // N, k x m
  std::vector<Matrix> h;      // N, k x m, h_K of the Q2 network output
  std::vector<Matrix> input;  // N, k x (1 + f)
  std::vector<MarketSnapshot> market;  // N
};

struct ValueBracket {
  double u_low = 0.0;
  double u_high = 0.0;
  double se_low = 0.0;
  double se_high = 0.0;
  long M = 0;
  long excluded = 0;  // paths with P2(N) <= 0, left out of u_low
  int N = 0;
  double T = 0.0;
  std::uint64_t eval_seed = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t path_seed = 0;

  double width() const { return u_high - u_low; }
  double midpoint() const { return 0.5 * (u_low + u_high); }
  nlohmann::json to_json() const;
  static ValueBracket from_json(const nlohmann::json& j);
};

// Mean of |U~'(Y_N) + P2_N|^2.
double loss_Q(const Matrix& YN, const Matrix& P2N, const UtilitySpec& utility);

class SmpSolver {
 public:
  SmpSolver(const SmpMarket& market, ConstraintSet constraint, UtilitySpec utility,
            SmpConfig config);

  const SmpConfig& config() const { return cfg_; }
  SmpState& state() { return state_; }
  const SmpState& state() const { return state_; }

  SmpTrace train();
  SmpTraceRow iterate(long iteration);

  // Plain simulation with frozen statistics.
  SmpPaths simulate(const std::vector<Matrix>& dW) const;

  // u_low from U(P2_N), u_high from U~(Y_N) + x0 y, on M paths of `gen`.
  ValueBracket bounds(const IncrementGenerator& gen, long M, long chunk = 1 << 14) const;

 private:
  SmpPaths sweep(const std::vector<Matrix>& dW, bool train_mode);
  Matrix v_value(int i, const Matrix& input) const;

  const SmpMarket& market_;
  ConstraintSet constraint_;
  UtilitySpec utility_;
  SmpConfig cfg_;
  SmpState state_;
  int m_;
  ad::ParamId block_;
};

}  // namespace deepsc
