#pragma once

// Feed-forward networks with input standardisation, first-order optimizers
// and the piecewise-constant learning-rate schedule.

#include "deepsc/autodiff.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace deepsc::nn {

using ad::Matrix;

// (L-1) l^2 + l (L + p + q) + q
long parameter_count(int p, int q, int layers, int hidden);

// {"rows", "cols", "data" (row-major)}
nlohmann::json matrix_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

struct NetworkShape {
  int input_dim = 1;
  int output_dim = 1;
  int layers = 4;
  int hidden = 11;
  ad::Activation activation = ad::Activation::Relu;

  long parameter_count() const {
    return nn::parameter_count(input_dim, output_dim, layers, hidden);
  }
  // hidden width defaults to input_dim + 10
  static NetworkShape make(int p, int q, int hidden = -1, int layers = 4,
                           ad::Activation act = ad::Activation::Relu);
};

class FeedForwardNetwork {
 public:
  FeedForwardNetwork() = default;
  FeedForwardNetwork(const NetworkShape& shape, std::uint64_t seed,
                     double init_std = 0.01);

  const NetworkShape& shape() const { return shape_; }
  // M_1, v_1, ..., M_{L+1}, v_{L+1}
  std::vector<Matrix>& params() { return params_; }
  const std::vector<Matrix>& params() const { return params_; }
  long parameter_count() const;

  // Train-mode statistics update: the first call initialises from the batch,
  // later calls blend with momentum 0.99.
  void update_normalisation(const Matrix& batch);
  Matrix normalise(const Matrix& batch) const;
  bool normalisation_ready() const { return norm_ready_; }
  const Eigen::RowVectorXd& running_mean() const { return mean_; }
  const Eigen::RowVectorXd& running_var() const { return var_; }

  // Plain forward pass with frozen statistics.
  Matrix evaluate(const Matrix& batch) const;

  // Records the forward pass on a tape. Parameters are registered under ids
  // base, base+1, ... in params() order.
  ad::Var forward(ad::Tape& tape, const Matrix& batch, bool train_mode,
                  ad::ParamId base);
  ad::Var forward(ad::Tape& tape, const Matrix& batch, ad::ParamId base) const;

  nlohmann::json to_json() const;
  static FeedForwardNetwork from_json(const nlohmann::json& j);
  void save_binary(const std::string& path) const;
  static FeedForwardNetwork load_binary(const std::string& path);

  static constexpr double kMomentum = 0.99;
  static constexpr double kNormEps = 1e-8;
  static constexpr double kConstantVar = 1e-12;

 private:
  void check_input(const Matrix& batch) const;

  NetworkShape shape_;
  std::vector<Matrix> params_;
  Eigen::RowVectorXd mean_;
  Eigen::RowVectorXd var_;
  bool norm_ready_ = false;
};

enum class OptimizerKind { Adam, Sgd, Momentum, Adagrad };

const char* optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Moment state for one parameter group. Adam uses both moments; momentum
// uses the first; Adagrad accumulates squared gradients in the second.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  long t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// Applies one update in place. grads[i] must match params[i]; throws
// NonFiniteGradient (leaving params untouched) on NaN/Inf.
void optimizer_step(std::vector<Matrix*> params,
                    const std::vector<Matrix>& grads, OptimizerState& state,
                    double rate);

nlohmann::json optimizer_json(const OptimizerState& s);
OptimizerState optimizer_from_json(const nlohmann::json& j);

// Convenience wrapper for the Adam case.
void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads,
               OptimizerState& state, double rate);

struct LearningSchedule {
  double bsde_rate_initial = 1e-2;
  double control_rate_initial = 1e-3;
  double decay_factor = 10.0;
  int decays = 3;
  long total = 1000;

  // Rates after floor(total * j / (decays + 1)) decay points, j = 1..decays.
  std::pair<double, double> rate_at(long iteration) const;
  std::vector<long> decay_points() const;
};

nlohmann::json to_json(const LearningSchedule& s);

}  // namespace deepsc::nn
