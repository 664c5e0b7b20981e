#pragma once

// Utility functions U, their convex duals U~(y) = sup_x {U(x) - xy}, and the
// terminal gain g extending U to the whole real line.

#include "deepsc/autodiff.hpp"

#include <memory>
#include <string>

namespace deepsc {

enum class UtilityKind { Power, Log, NonHara };

struct UtilitySpec {
  UtilityKind kind = UtilityKind::Power;
  double p = 0.5;  // power exponent, used by Power only

  static UtilitySpec power(double p);
  static UtilitySpec log() { return {UtilityKind::Log, 0.0}; }
  static UtilitySpec nonhara() { return {UtilityKind::NonHara, 0.0}; }
  std::string name() const;
};

UtilitySpec utility_from_name(const std::string& name, double p = 0.5);

struct Derivs {
  double value;
  double d1;
  double d2;
};

// Log utility's terminal gain is clipped below at this level.
inline constexpr double kLogClip = -50.0;

// U, U', U'' at x > 0; throws std::domain_error otherwise.
Derivs u_eval(const UtilitySpec& spec, double x);
// U~, U~', U~'' at y > 0; throws std::domain_error otherwise.
Derivs dual_eval(const UtilitySpec& spec, double y);
// (U')^{-1}(y)
double inverse_marginal(const UtilitySpec& spec, double y);

// g(x) = U(x) for x > 0, 0 otherwise; log clipped at kLogClip.
double terminal_gain(const UtilitySpec& spec, double x);
double terminal_gain_grad(const UtilitySpec& spec, double x);
// True when the log clip is active at x.
bool terminal_clip_active(const UtilitySpec& spec, double x);

// U~(y) - (U(x) - xy) >= 0, zero iff x = (U')^{-1}(y).
double legendre_residual(const UtilitySpec& spec, double x, double y);

// Elementwise tape functions.
std::shared_ptr<const ad::ElementwiseFn> gain_fn(const UtilitySpec& spec);
std::shared_ptr<const ad::ElementwiseFn> dual_fn(const UtilitySpec& spec);
std::shared_ptr<const ad::ElementwiseFn> dual_grad_fn(const UtilitySpec& spec);

}  // namespace deepsc
