#include "deepsc/constraints.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace deepsc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_dim(const ConstraintSet& set, Eigen::Index n) {
  if (n != set.m)
    throw std::invalid_argument("vector dimension does not match constraint set");
}
}  // namespace

ConstraintSet ConstraintSet::full(int m) { return {SetKind::Full, m, 0.0, {}, {}}; }
ConstraintSet ConstraintSet::cone(int m) { return {SetKind::Cone, m, 0.0, {}, {}}; }

ConstraintSet ConstraintSet::ball(int m, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball radius must be positive");
  return {SetKind::Ball, m, radius, {}, {}};
}

ConstraintSet ConstraintSet::box(Eigen::VectorXd lower, Eigen::VectorXd upper) {
  if (lower.size() != upper.size() || lower.size() == 0)
    throw std::invalid_argument("box bounds must have equal nonzero length");
  for (Eigen::Index i = 0; i < lower.size(); ++i)
    if (!(lower(i) <= 0.0 && upper(i) >= 0.0))
      throw std::invalid_argument("box must contain the origin");
  ConstraintSet s;
  s.kind = SetKind::Box;
  s.m = static_cast<int>(lower.size());
  s.lower = std::move(lower);
  s.upper = std::move(upper);
  return s;
}

std::string ConstraintSet::name() const {
  switch (kind) {
    case SetKind::Full: return "full";
    case SetKind::Cone: return "cone";
    case SetKind::Ball: return "ball";
    case SetKind::Box: return "box";
  }
  return "?";
}

SetKind set_kind_from_name(const std::string& name) {
  if (name == "full") return SetKind::Full;
  if (name == "cone") return SetKind::Cone;
  if (name == "ball") return SetKind::Ball;
  if (name == "box") return SetKind::Box;
  throw std::invalid_argument("unknown constraint kind: " + name);
}

double support(const ConstraintSet& set, const Eigen::VectorXd& z) {
  check_dim(set, z.size());
  switch (set.kind) {
    case SetKind::Full: return z.isZero(0.0) ? 0.0 : kInf;
    case SetKind::Cone: return (z.array() >= 0.0).all() ? 0.0 : kInf;
    case SetKind::Ball: return set.radius * z.norm();
    case SetKind::Box: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < z.size(); ++i)
        s += std::max(-set.lower(i) * z(i), -set.upper(i) * z(i));
      return s;
    }
  }
  return kInf;
}

bool contains(const ConstraintSet& set, const Eigen::VectorXd& x, double tol) {
  check_dim(set, x.size());
  switch (set.kind) {
    case SetKind::Full: return x.allFinite();
    case SetKind::Cone: return (x.array() >= -tol).all();
    case SetKind::Ball: return x.norm() <= set.radius * (1.0 + tol) + tol;
    case SetKind::Box:
      return ((x - set.lower).array() >= -tol).all() &&
             ((set.upper - x).array() >= -tol).all();
  }
  return false;
}

Eigen::VectorXd project_hard(const ConstraintSet& set, const Eigen::VectorXd& x,
                             ConeRule cone_rule, BallRule ball_rule) {
  check_dim(set, x.size());
  switch (set.kind) {
    case SetKind::Full: return x;
    case SetKind::Cone:
      return cone_rule == ConeRule::Max ? Eigen::VectorXd(x.cwiseMax(0.0))
                                        : Eigen::VectorXd(x.cwiseProduct(x));
    case SetKind::Ball: {
      const double n = x.norm();
      if (ball_rule == BallRule::Radial)
        return n <= set.radius ? x : Eigen::VectorXd(x * (set.radius / n));
      if (n == 0.0) return x;
      return x * (set.radius / n * (1.0 - std::exp(-n * n)));
    }
    case SetKind::Box: return x.cwiseMax(set.lower).cwiseMin(set.upper);
  }
  return x;
}

ad::Var project_hard(ad::Tape& tape, const ConstraintSet& set, ad::Var raw,
                     ConeRule cone_rule, BallRule ball_rule) {
  if (raw.cols() != set.m)
    throw std::invalid_argument("control width does not match constraint set");
  switch (set.kind) {
    case SetKind::Full: return raw;
    case SetKind::Cone:
      return cone_rule == ConeRule::Max ? tape.relu(raw) : tape.square(raw);
    case SetKind::Ball: {
      const double R = set.radius;
      ad::Var sq = tape.sum_cols(tape.square(raw));
      ad::Var norm = tape.sqrt(sq);
      std::shared_ptr<ad::ElementwiseFn> fn = std::make_shared<ad::ElementwiseFn>();
      if (ball_rule == BallRule::Radial) {
        // factor min(1, R/n)
        fn->f = [R](double n) { return n <= R ? 1.0 : R / n; };
        fn->df = [R](double n) { return n <= R ? 0.0 : -R / (n * n); };
        fn->name = "radial";
      } else {
        // factor R (1 - exp(-n^2)) / n, continuous at 0 with value 0
        fn->f = [R](double n) {
          if (n < 1e-8) return R * n;
          return R * (1.0 - std::exp(-n * n)) / n;
        };
        fn->df = [R](double n) {
          if (n < 1e-8) return R;
          const double e = std::exp(-n * n);
          return R * (2.0 * e - (1.0 - e) / (n * n));
        };
        fn->name = "exp_rescale";
      }
      return tape.mul_col(raw, tape.map(norm, fn));
    }
    case SetKind::Box: {
      const Eigen::RowVectorXd lo = set.lower.transpose();
      const Eigen::RowVectorXd hi = set.upper.transpose();
      ad::Matrix lo_m = lo.replicate(raw.rows(), 1);
      ad::Matrix hi_m = hi.replicate(raw.rows(), 1);
      // lo + relu(x - lo) - relu(x - hi)
      ad::Var l = tape.constant(lo_m);
      ad::Var h = tape.constant(hi_m);
      return tape.sub(tape.add(l, tape.relu(tape.sub(raw, l))),
                      tape.relu(tape.sub(raw, h)));
    }
  }
  return raw;
}

ad::Var project_dual(ad::Tape& tape, const ConstraintSet& set, ad::Var raw) {
  switch (set.kind) {
    case SetKind::Full:
      return tape.constant(ad::Matrix::Zero(raw.rows(), raw.cols()));
    case SetKind::Cone: return tape.relu(raw);
    case SetKind::Ball:
    case SetKind::Box: return raw;
  }
  return raw;
}

Eigen::VectorXd project_dual(const ConstraintSet& set, const Eigen::VectorXd& raw) {
  switch (set.kind) {
    case SetKind::Full: return Eigen::VectorXd::Zero(raw.size());
    case SetKind::Cone: return raw.cwiseMax(0.0);
    default: return raw;
  }
}

ad::Var support(ad::Tape& tape, const ConstraintSet& set, ad::Var v) {
  switch (set.kind) {
    case SetKind::Full:
    case SetKind::Cone:
      return tape.constant(ad::Matrix::Zero(v.rows(), 1));
    case SetKind::Ball:
      return tape.scale(tape.sqrt(tape.sum_cols(tape.square(v))), set.radius);
    case SetKind::Box: {
      // sum_i max(-lo_i v_i, -hi_i v_i) = sum_i (-hi_i v_i + relu((hi_i - lo_i) v_i))
      const Eigen::RowVectorXd lo = set.lower.transpose();
      const Eigen::RowVectorXd hi = set.upper.transpose();
      ad::Var neg_hi = tape.constant((-hi).replicate(v.rows(), 1));
      ad::Var span = tape.constant((hi - lo).replicate(v.rows(), 1));
      return tape.sum_cols(tape.add(tape.mul(neg_hi, v), tape.relu(tape.mul(span, v))));
    }
  }
  return v;
}

double penalty(const ConstraintSet& set, const Eigen::VectorXd& pi,
               const PenaltyConfig& cfg) {
  check_dim(set, pi.size());
  switch (set.kind) {
    case SetKind::Ball: {
      const double e = std::max(0.0, pi.norm() - set.radius);
      return cfg.weight * e * e;
    }
    case SetKind::Box: {
      const Eigen::VectorXd lo = (set.lower - pi).cwiseMax(0.0);
      const Eigen::VectorXd hi = (pi - set.upper).cwiseMax(0.0);
      return cfg.weight * (lo.squaredNorm() + hi.squaredNorm());
    }
    default: return 0.0;
  }
}

ad::Var penalty(ad::Tape& tape, const ConstraintSet& set, ad::Var pi,
                const PenaltyConfig& cfg) {
  switch (set.kind) {
    case SetKind::Ball: {
      ad::Var n = tape.sqrt(tape.sum_cols(tape.square(pi)));
      ad::Var e = tape.relu(tape.add_scalar(n, -set.radius));
      return tape.scale(tape.square(e), cfg.weight);
    }
    case SetKind::Box: {
      ad::Var lo = tape.constant(set.lower.transpose().replicate(pi.rows(), 1));
      ad::Var hi = tape.constant(set.upper.transpose().replicate(pi.rows(), 1));
      ad::Var a = tape.relu(tape.sub(lo, pi));
      ad::Var b = tape.relu(tape.sub(pi, hi));
      return tape.scale(tape.sum_cols(tape.add(tape.square(a), tape.square(b))),
                        cfg.weight);
    }
    default: return tape.constant(ad::Matrix::Zero(pi.rows(), 1));
  }
}

double complementarity_residual(const ConstraintSet& set, double p2,
                                const Eigen::VectorXd& q2,
                                const Eigen::MatrixXd& sigma,
                                const Eigen::VectorXd& v) {
  const double d = support(set, v);
  if (!std::isfinite(d))
    throw std::domain_error("dual control outside the finite-support region");
  const Eigen::VectorXd sv = sigma.lu().solve(v);
  return p2 * d + q2.dot(sv);
}

}  // namespace deepsc
