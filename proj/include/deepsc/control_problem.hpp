#pragma once

// Generic controlled diffusion dX = b(t,X,pi) dt + sigma(t,X,pi) dW with
// terminal gain g, plus the utility problems built on it.
//
// Batch layout: states k x d, controls k x m, diffusion k x (d n) row-major
// (entry (l, c) of the d x n matrix at column l n + c).

#include "deepsc/autodiff.hpp"
#include "deepsc/constraints.hpp"
#include "deepsc/sde.hpp"
#include "deepsc/utilities.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace deepsc {

// Dual problems start one state coordinate at a free value y0 chosen by
// minimising E[U~(Y_N)] + y0 x0.
struct FreeInitial {
  int coord = 0;
  UtilitySpec dual_utility;
  double x0 = 1.0;
};

class ControlProblem {
 public:
  virtual ~ControlProblem() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int noise_dim() const = 0;
  virtual int control_dim() const = 0;
  virtual Eigen::RowVectorXd initial_state() const = 0;
  virtual bool minimise() const { return false; }

  virtual ad::Var drift(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const = 0;
  virtual ad::Var diffusion(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const = 0;
  // Optional running gain f(t, x, pi), k x 1; invalid Var when absent.
  virtual ad::Var running_gain(ad::Tape&, double, ad::Var, ad::Var) const { return {}; }

  virtual Matrix terminal_gain(const Matrix& x) const = 0;       // k x 1
  virtual Matrix terminal_gain_grad(const Matrix& x) const = 0;  // k x d

  // Raw network output -> admissible control (hard constraint).
  virtual ad::Var control_from_raw(ad::Tape&, ad::Var raw) const { return raw; }
  // Soft-constraint penalty subtracted from (maximisation) or added to
  // (minimisation) the control loss; invalid Var when absent.
  virtual ad::Var control_penalty(ad::Tape&, ad::Var) const { return {}; }

  // Coordinates simulated by Euler on their logarithm (positive geometric
  // processes); the others use plain Euler.
  virtual std::vector<bool> log_coordinates() const {
    return std::vector<bool>(state_dim(), false);
  }

  virtual std::optional<FreeInitial> free_initial() const { return std::nullopt; }

  // Jacobians in x at fixed control: jb k x (d d) with entry (l, j) =
  // d b_l / d x_j; jsigma k x (d n d) with entry ((l n + c), j) =
  // d sigma_{lc} / d x_j. The default differentiates drift/diffusion on a
  // scratch tape.
  virtual void jacobians(double t, const Matrix& x, const Matrix& pi, Matrix& jb,
                         Matrix& jsigma) const;

  // Plain evaluation helpers.
  Matrix drift_value(double t, const Matrix& x, const Matrix& pi) const;
  Matrix diffusion_value(double t, const Matrix& x, const Matrix& pi) const;
  Matrix control_value(const Matrix& raw) const;

  // One scheme step given precomputed drift and diffusion.
  Matrix step_state(const Matrix& x, const Matrix& drift, const Matrix& diffusion,
                    double dt, const Matrix& dW) const;
};

// b(t,x,pi)'z + 1/2 tr(sigma sigma' gamma) (+ f), k x 1. z is k x d, gamma
// k x (d d) row-major.
ad::Var hamiltonian_F(ad::Tape& tape, const ControlProblem& problem, double t,
                      ad::Var x, ad::Var pi, ad::Var z, ad::Var gamma);
// D_x [b'z + tr(sigma' q)] at fixed pi; q is k x (d n). Returns k x d.
Matrix hamiltonian_H_grad(const ControlProblem& problem, double t, const Matrix& x,
                          const Matrix& pi, const Matrix& z, const Matrix& q);
// True when F is affine in pi with a nonzero slope somewhere on the batch
// (gamma-term vanishes), so the supremum over an unbounded K is infinite.
bool hamiltonian_degenerate(const ControlProblem& problem, double t,
                            const Matrix& x, const Matrix& z, const Matrix& gamma);

struct WealthOptions {
  ConeRule cone_rule = ConeRule::Max;
  BallRule ball_rule = BallRule::Radial;
  bool soft_constraint = false;  // penalty instead of hard projection
  PenaltyConfig penalty;
};

// Wealth X (d = 1, n = m) controlled by portfolio proportions pi in K.
class PrimalWealthProblem : public ControlProblem {
 public:
  PrimalWealthProblem(MarketCoefficients market, UtilitySpec utility,
                      ConstraintSet constraint, double x0, WealthOptions opt = {});

  std::string name() const override { return "primal-wealth"; }
  int state_dim() const override { return 1; }
  int noise_dim() const override { return market_.m; }
  int control_dim() const override { return market_.m; }
  Eigen::RowVectorXd initial_state() const override;

  ad::Var drift(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const override;
  ad::Var diffusion(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const override;
  Matrix terminal_gain(const Matrix& x) const override;
  Matrix terminal_gain_grad(const Matrix& x) const override;
  ad::Var control_from_raw(ad::Tape& tape, ad::Var raw) const override;
  ad::Var control_penalty(ad::Tape& tape, ad::Var pi) const override;
  void jacobians(double t, const Matrix& x, const Matrix& pi, Matrix& jb,
                 Matrix& jsigma) const override;

  const MarketCoefficients& market() const { return market_; }
  const UtilitySpec& utility() const { return utility_; }
  const ConstraintSet& constraint() const { return constraint_; }
  double x0() const { return x0_; }

 private:
  MarketCoefficients market_;
  UtilitySpec utility_;
  ConstraintSet constraint_;
  double x0_;
  WealthOptions opt_;
};

// Dual state Y (d = 1) controlled by v with free initial value y0.
class DualWealthProblem : public ControlProblem {
 public:
  DualWealthProblem(MarketCoefficients market, UtilitySpec utility,
                    ConstraintSet constraint, double x0);

  std::string name() const override { return "dual-wealth"; }
  int state_dim() const override { return 1; }
  int noise_dim() const override { return market_.m; }
  int control_dim() const override { return market_.m; }
  Eigen::RowVectorXd initial_state() const override;
  bool minimise() const override { return true; }

  ad::Var drift(ad::Tape& tape, double t, ad::Var y, ad::Var v) const override;
  ad::Var diffusion(ad::Tape& tape, double t, ad::Var y, ad::Var v) const override;
  Matrix terminal_gain(const Matrix& y) const override;
  Matrix terminal_gain_grad(const Matrix& y) const override;
  ad::Var control_from_raw(ad::Tape& tape, ad::Var raw) const override;
  std::vector<bool> log_coordinates() const override { return {true}; }
  std::optional<FreeInitial> free_initial() const override;
  void jacobians(double t, const Matrix& x, const Matrix& pi, Matrix& jb,
                 Matrix& jsigma) const override;

 private:
  MarketCoefficients market_;
  UtilitySpec utility_;
  ConstraintSet constraint_;
  double x0_;
};

// Heston market with n independent stocks. State (X, v_1..v_n), noise
// (W^s_1..W^s_n, W^perp_1..W^perp_n), control pi in R^n.
class HestonPrimalProblem : public ControlProblem {
 public:
  HestonPrimalProblem(HestonParams params, int stocks, UtilitySpec utility, double x0);

  std::string name() const override { return "heston-primal"; }
  int state_dim() const override { return 1 + n_; }
  int noise_dim() const override { return 2 * n_; }
  int control_dim() const override { return n_; }
  Eigen::RowVectorXd initial_state() const override;

  ad::Var drift(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const override;
  ad::Var diffusion(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const override;
  Matrix terminal_gain(const Matrix& x) const override;
  Matrix terminal_gain_grad(const Matrix& x) const override;
  void jacobians(double t, const Matrix& x, const Matrix& pi, Matrix& jb,
                 Matrix& jsigma) const override;

  const HestonParams& params() const { return h_; }

 private:
  HestonParams h_;
  int n_;
  UtilitySpec utility_;
  double x0_;
};

// Dual of the above with K = R^n (eta = 0), control gamma in R^n.
class HestonDualProblem : public ControlProblem {
 public:
  HestonDualProblem(HestonParams params, int stocks, UtilitySpec utility, double x0);

  std::string name() const override { return "heston-dual"; }
  int state_dim() const override { return 1 + n_; }
  int noise_dim() const override { return 2 * n_; }
  int control_dim() const override { return n_; }
  Eigen::RowVectorXd initial_state() const override;
  bool minimise() const override { return true; }

  ad::Var drift(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const override;
  ad::Var diffusion(ad::Tape& tape, double t, ad::Var x, ad::Var pi) const override;
  Matrix terminal_gain(const Matrix& x) const override;
  Matrix terminal_gain_grad(const Matrix& x) const override;
  std::vector<bool> log_coordinates() const override;
  std::optional<FreeInitial> free_initial() const override;
  void jacobians(double t, const Matrix& x, const Matrix& pi, Matrix& jb,
                 Matrix& jsigma) const override;

 private:
  HestonParams h_;
  int n_;
  UtilitySpec utility_;
  double x0_;
};

}  // namespace deepsc
