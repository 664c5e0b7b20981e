#pragma once

// Closed-form and semi-analytic reference values. None of these share code
// with the solvers beyond the market and utility definitions.

#include "deepsc/sde.hpp"
#include "deepsc/utilities.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace deepsc {

struct ClosedFormSolution {
  double value = 0.0;       // u(0, x0)
  double dual_value = 0.0;  // u~(0, y_hat)
  double y_hat = 0.0;
  std::string source;
  nlohmann::json to_json() const;
};

// Unconstrained non-HARA utility with constant r and theta.
class NonHaraSolution {
 public:
  NonHaraSolution(double r, double theta_sq, double x0, double T);

  const ClosedFormSolution& solution() const { return sol_; }
  double T() const { return T_; }

  // u~(t, y) and its first two y-derivatives.
  double dual_value(double t, double y) const;
  double dual_dy(double t, double y) const;
  double dual_dyy(double t, double y) const;
  // u(t, x) and u_x(t, x), from a Newton solve of x = -u~_y(t, y).
  double primal_value(double t, double x) const;
  double primal_dx(double t, double x) const;

  // Optimal dual state given theta'W(t).
  double Y(double t, double theta_W) const;
  // Z2(t) = u~_y(t, Y(t)), a negative process; X = -Z2.
  double Z2(double t, double theta_W) const;
  double V2(double t, double theta_W) const { return dual_value(t, Y(t, theta_W)); }

 private:
  double r_, th2_, x0_, T_;
  ClosedFormSolution sol_;
};

NonHaraSolution nonhara_value(const MarketCoefficients& c, double x0, double T);

// Which dual controls are admissible: K = R^m forces v = 0, the cone K = R_+^m
// allows v in R_+^m, K = {0} leaves v free.
enum class MertonDualSet { Zero, Cone, Free };

struct MertonConeSolution {
  ClosedFormSolution sol;
  std::vector<double> t;
  std::vector<Vector> v_hat;
  std::vector<double> theta_hat_sq;
};

// Power utility with deterministic coefficients. v_hat(t) minimises
// |theta + sigma^{-1} v|^2 over the admissible set by projected gradient
// descent; time integrals use composite Simpson on `grid` (even) intervals.
MertonConeSolution merton_cone_solution(const MarketCoefficients& c, double p, double x0,
                                        double T, int grid = 200,
                                        MertonDualSet set = MertonDualSet::Cone);

// Log utility on the ball B(0, R): pointwise proximal solve of
// R|v| + |theta + sigma^{-1} v|^2 / 2, value log x0 + int (r + R|v| + |theta_hat|^2/2).
MertonConeSolution log_ball_solution(const MarketCoefficients& c, double R, double x0,
                                     double T, int grid = 200);

struct RiccatiPair {
  std::vector<double> t;
  std::vector<double> C;
  std::vector<double> D;
};

// Backward RK4 for u(t, x, v) = (x^p / p) exp(C(t) + D(t) v) with
// C(T) = D(T) = 0. Throws std::runtime_error on blow-up.
RiccatiPair heston_riccati(const HestonParams& h, double p, double T, int steps = 10000);
double heston_riccati_value(const HestonParams& h, double p, double x0, double T,
                            int steps = 10000);
// Optimal proportion (A + rho xi D(t)) / (1 - p) at a grid time.
double heston_optimal_pi(const HestonParams& h, double p, double D);

struct DualityResiduals {
  double x = 0.0;  // max |X + Z2| / x0
  double v = 0.0;  // max |V1 - (V2 - Z2 Y)| / |V1|
  double z = 0.0;  // max |Z1 - Y| / |Y|
  double max() const { return std::max(x, std::max(v, z)); }
  nlohmann::json to_json() const { return {{"x", x}, {"v", v}, {"z", z}}; }
};

// Pathwise residuals of the primal-dual relations; every vector holds one
// k x 1 matrix per time point.
DualityResiduals duality_relation_check(const std::vector<Matrix>& X,
                                        const std::vector<Matrix>& V1,
                                        const std::vector<Matrix>& Z1,
                                        const std::vector<Matrix>& Y,
                                        const std::vector<Matrix>& V2,
                                        const std::vector<Matrix>& Z2, double x0);

}  // namespace deepsc
