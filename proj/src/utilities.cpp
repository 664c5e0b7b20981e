#include "deepsc/utilities.hpp"

#include <cmath>
#include <stdexcept>

namespace deepsc {

UtilitySpec UtilitySpec::power(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("power utility needs p in (0,1)");
  return {UtilityKind::Power, p};
}

std::string UtilitySpec::name() const {
  switch (kind) {
    case UtilityKind::Power: return "power";
    case UtilityKind::Log: return "log";
    case UtilityKind::NonHara: return "nonhara";
  }
  return "?";
}

UtilitySpec utility_from_name(const std::string& name, double p) {
  if (name == "power") return UtilitySpec::power(p);
  if (name == "log") return UtilitySpec::log();
  if (name == "nonhara" || name == "non-hara") return UtilitySpec::nonhara();
  throw std::invalid_argument("unknown utility: " + name);
}

namespace {

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x))
    throw std::domain_error(std::string(what) + " requires a positive argument");
}

}  // namespace

Derivs u_eval(const UtilitySpec& spec, double x) {
  require_positive(x, "u_eval");
  switch (spec.kind) {
    case UtilityKind::Power: {
      const double p = spec.p;
      const double xp = std::pow(x, p);
      return {xp / p, xp / x, (p - 1.0) * xp / (x * x)};
    }
    case UtilityKind::Log:
      return {std::log(x), 1.0 / x, -1.0 / (x * x)};
    case UtilityKind::NonHara: {
      const double s = std::sqrt(1.0 + 4.0 * x);
      const double w = s - 1.0;
      const double h = std::sqrt(2.0 / w);
      const double u = 1.0 / (3.0 * h * h * h) + 1.0 / h + x * h;
      const double d2 = -std::sqrt(2.0) * std::pow(w, -1.5) / s;
      return {u, h, d2};
    }
  }
  throw std::logic_error("bad utility kind");
}

Derivs dual_eval(const UtilitySpec& spec, double y) {
  require_positive(y, "dual_eval");
  switch (spec.kind) {
    case UtilityKind::Power: {
      const double p = spec.p;
      const double e = p / (p - 1.0);
      const double c = (1.0 - p) / p;
      const double ye = std::pow(y, e);
      return {c * ye, c * e * ye / y, c * e * (e - 1.0) * ye / (y * y)};
    }
    case UtilityKind::Log:
      return {-(1.0 + std::log(y)), -1.0 / y, 1.0 / (y * y)};
    case UtilityKind::NonHara: {
      const double y2 = y * y;
      const double y3 = y2 * y;
      return {1.0 / (3.0 * y3) + 1.0 / y, -1.0 / (y3 * y) - 1.0 / y2,
              4.0 / (y3 * y2) + 2.0 / y3};
    }
  }
  throw std::logic_error("bad utility kind");
}

double inverse_marginal(const UtilitySpec& spec, double y) {
  require_positive(y, "inverse_marginal");
  // (U')^{-1}(y) = -U~'(y)
  return -dual_eval(spec, y).d1;
}

bool terminal_clip_active(const UtilitySpec& spec, double x) {
  return spec.kind == UtilityKind::Log && x > 0.0 && std::log(x) < kLogClip;
}

double terminal_gain(const UtilitySpec& spec, double x) {
  if (!(x > 0.0)) return 0.0;
  if (terminal_clip_active(spec, x)) return kLogClip;
  return u_eval(spec, x).value;
}

double terminal_gain_grad(const UtilitySpec& spec, double x) {
  if (!(x > 0.0)) return 0.0;
  if (terminal_clip_active(spec, x)) return 0.0;
  return u_eval(spec, x).d1;
}

double legendre_residual(const UtilitySpec& spec, double x, double y) {
  return dual_eval(spec, y).value - (u_eval(spec, x).value - x * y);
}

std::shared_ptr<const ad::ElementwiseFn> gain_fn(const UtilitySpec& spec) {
  auto fn = std::make_shared<ad::ElementwiseFn>();
  fn->f = [spec](double x) { return terminal_gain(spec, x); };
  fn->df = [spec](double x) { return terminal_gain_grad(spec, x); };
  fn->name = "gain_" + spec.name();
  return fn;
}

std::shared_ptr<const ad::ElementwiseFn> dual_fn(const UtilitySpec& spec) {
  auto fn = std::make_shared<ad::ElementwiseFn>();
  fn->f = [spec](double y) { return dual_eval(spec, y).value; };
  fn->df = [spec](double y) { return dual_eval(spec, y).d1; };
  fn->name = "dual_" + spec.name();
  return fn;
}

std::shared_ptr<const ad::ElementwiseFn> dual_grad_fn(const UtilitySpec& spec) {
  auto fn = std::make_shared<ad::ElementwiseFn>();
  fn->f = [spec](double y) { return dual_eval(spec, y).d1; };
  fn->df = [spec](double y) { return dual_eval(spec, y).d2; };
  fn->name = "dual_grad_" + spec.name();
  return fn;
}

}  // namespace deepsc
