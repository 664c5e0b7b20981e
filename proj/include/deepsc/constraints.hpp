#pragma once

// Closed convex control sets K: support function of -K, hard projections
// onto K (or the polar cone for dual controls) and soft penalties.

#include "deepsc/autodiff.hpp"

#include <Eigen/Dense>

#include <string>

namespace deepsc {

enum class SetKind { Full, Cone, Ball, Box };

// How raw network outputs are mapped into a cone.
enum class ConeRule { Max, Square };
// How raw outputs are mapped into a ball.
enum class BallRule { Radial, ExpRescale };

struct ConstraintSet {
  SetKind kind = SetKind::Full;
  int m = 1;
  double radius = 1.0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static ConstraintSet full(int m);
  static ConstraintSet cone(int m);
  static ConstraintSet ball(int m, double radius);
  static ConstraintSet box(Eigen::VectorXd lower, Eigen::VectorXd upper);
  std::string name() const;
};

SetKind set_kind_from_name(const std::string& name);

struct PenaltyConfig {
  double weight = 1000.0;
};

// sup_{pi in K} -pi.z ; +inf when unbounded.
double support(const ConstraintSet& set, const Eigen::VectorXd& z);

bool contains(const ConstraintSet& set, const Eigen::VectorXd& x,
              double tol = 1e-12);

Eigen::VectorXd project_hard(const ConstraintSet& set, const Eigen::VectorXd& x,
                             ConeRule cone_rule = ConeRule::Max,
                             BallRule ball_rule = BallRule::Radial);

// Row-wise tape versions over a k x m batch.
ad::Var project_hard(ad::Tape& tape, const ConstraintSet& set, ad::Var raw,
                     ConeRule cone_rule = ConeRule::Max,
                     BallRule ball_rule = BallRule::Radial);
// Maps raw dual-control outputs into the set where the support is finite.
// Full space forces zero, cones use max(0, .), balls and boxes are left free.
ad::Var project_dual(ad::Tape& tape, const ConstraintSet& set, ad::Var raw);
Eigen::VectorXd project_dual(const ConstraintSet& set, const Eigen::VectorXd& raw);
// k x 1 support values of dual controls already inside the finite region.
ad::Var support(ad::Tape& tape, const ConstraintSet& set, ad::Var v);

// weight * max(0, |pi| - R)^2 for balls, squared box violation for boxes,
// zero for the other kinds.
double penalty(const ConstraintSet& set, const Eigen::VectorXd& pi,
               const PenaltyConfig& cfg);
ad::Var penalty(ad::Tape& tape, const ConstraintSet& set, ad::Var pi,
                const PenaltyConfig& cfg);

// P2 delta_K(v) + Q2' sigma^{-1} v ; throws std::domain_error when the support
// is infinite.
double complementarity_residual(const ConstraintSet& set, double p2,
                                const Eigen::VectorXd& q2,
                                const Eigen::MatrixXd& sigma,
                                const Eigen::VectorXd& v);

}  // namespace deepsc
