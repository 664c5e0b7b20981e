// Acceptance run: one [PASS]/[FAIL] line per criterion, exit status 1 when
// any criterion fails. Pass criterion ids (C1 ... C10) to run a subset.

#include "deepsc/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#ifndef DEEPSC_UNIT_TESTS
#define DEEPSC_UNIT_TESTS "unit_tests"
#endif

using namespace deepsc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double x, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

bool sig5(double value, double target) {
  // 5 significant figures of a number in [1, 10)
  return std::abs(value - target) < 0.5e-4;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr double kHestonTruth = 2.03289;

Outcome c1() {
  HestonParams h;
  const auto t0 = Clock::now();
  const double a = heston_riccati_value(h, 0.5, 1.0, 0.2);
  const double b = heston_riccati_value(h, 0.5, 1.0, 0.5);
  const double c = heston_riccati_value(h, 0.5, 1.0, 1.0);
  const double secs = seconds_since(t0);
  const bool ok = sig5(a, 2.03289) && sig5(b, 2.07559) && sig5(c, 2.13420) && secs < 1.0;
  return {ok, "T=0.2 " + num(a, 7) + ", T=0.5 " + num(b, 7) + ", T=1.0 " + num(c, 7) +
                  " (targets 2.03289, 2.07559, 2.13420), " + num(secs, 3) + " s"};
}

Outcome c2() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = preset("example3-ball-log");
  const double v = oracle_for(cfg)->value;
  const double secs = seconds_since(t0);
  const bool ok = std::abs(v - 1.64755570) <= 1e-6 && secs < 10.0;
  return {ok, "log-ball value " + num(v, 10) + " (target 1.64755570 +- 1e-6), " + num(secs, 3) +
                  " s"};
}

// Shared by C3 and C4.
const ResultRecord& heston_both() {
  static const ResultRecord rec = run_experiment(preset("heston-power"));
  return rec;
}

Outcome c3() {
  const ResultRecord& r = heston_both();
  if (!r.error.empty()) return {false, r.error};
  const double e = std::abs(r.primal.value - kHestonTruth) / kHestonTruth;
  return {e < 1e-3, "primal " + num(r.primal.value, 7) + ", rel err " + num(e, 3) + " after " +
                        std::to_string(r.config.iterations) + " iterations, " +
                        num(r.primal.seconds, 3) + " s"};
}

Outcome c4() {
  const ResultRecord& r = heston_both();
  if (!r.error.empty()) return {false, r.error};
  const double e = std::abs(r.dual.value - kHestonTruth) / kHestonTruth;
  const double se = std::hypot(r.primal.mc_se, r.dual.mc_se);
  const bool order = r.dual.mc >= r.primal.mc - 3.0 * se;
  return {e < 3e-3 && order, "dual " + num(r.dual.value, 7) + ", rel err " + num(e, 3) +
                                 "; MC dual " + num(r.dual.mc, 7) + " vs primal " +
                                 num(r.primal.mc, 7) + " (3 se = " + num(3 * se, 3) + ")"};
}

Outcome c5() {
  // Both grids see the same Brownian paths: N=5 sums pairs of N=10 increments.
  std::vector<ValueBracket> b;
  std::string detail;
  bool ok = true;
  for (int N : {5, 10}) {
    ExperimentConfig cfg = preset("heston-smp");
    cfg.N = N;
    cfg.eval_substeps = 10 / N;
    const ResultRecord r = run_experiment(cfg);
    if (!r.smp) return {false, "N=" + std::to_string(N) + ": " + r.error};
    const ValueBracket& v = *r.smp;
    const bool low = v.u_low <= kHestonTruth + 3.0 * v.se_low;
    const bool high = v.u_high >= kHestonTruth - 3.0 * v.se_high;
    ok = ok && low && high;
    detail += "N=" + std::to_string(N) + " [" + num(v.u_low, 7) + " +- " + num(v.se_low, 2) +
              ", " + num(v.u_high, 7) + " +- " + num(v.se_high, 2) + "]" +
              (low ? "" : " u_low too high") + (high ? "" : " u_high too low") + "; ";
    b.push_back(v);
  }
  const double rel_width = b[1].width() / kHestonTruth;
  const bool shrink = b[1].width() < b[0].width();
  ok = ok && shrink && rel_width < 1e-3;
  detail += "width " + num(b[0].width(), 3) + " -> " + num(b[1].width(), 3) +
            ", relative width at N=10 " + num(rel_width, 3);
  return {ok, detail};
}

// Trained Example 1 solvers shared by C6 and C9.
struct Example1 {
  ExperimentConfig cfg = preset("example1-nonhara");
  std::unique_ptr<ControlProblem> pp = build_problem(cfg, false);
  std::unique_ptr<ControlProblem> dp = build_problem(cfg, true);
  Bsde2Solver primal{*pp, bsde_config(cfg)};
  Bsde2Solver dual{*dp, bsde_config(cfg)};
  std::string error;
  double seconds = 0.0;

  Example1() {
    const auto t0 = Clock::now();
    try {
      primal.train();
      dual.train();
    } catch (const DivergenceError& e) {
      error = e.what();
    }
    seconds = seconds_since(t0);
  }
};

Example1& example1() {
  static Example1 e;
  return e;
}

Outcome c6() {
  Example1& ex = example1();
  if (!ex.error.empty()) return {false, ex.error};
  const double truth = oracle_for(ex.cfg)->value;
  const double ep = std::abs(ex.primal.value_at_zero() - truth) / truth;
  const double ed = std::abs(ex.dual.value_at_zero() - truth) / truth;
  const auto dW = IncrementGenerator(ex.cfg.seeds.eval).path_batch(0, 4096, ex.cfg.N, ex.cfg.market.m);
  const double lp = ex.primal.l1_on(dW), ld = ex.dual.l1_on(dW);
  const bool ok = ep < 5e-3 && ed < 5e-3 && lp < 1e-5 && ld < 1e-5;
  return {ok, "closed form " + num(truth, 8) + "; primal rel err " + num(ep, 3) + ", dual " +
                  num(ed, 3) + "; L1 primal " + num(lp, 3) + ", dual " + num(ld, 3) + "; " +
                  num(ex.seconds, 4) + " s"};
}

Outcome c7() {
  const ConvergenceResult n = convergence_study(preset("heston-power-nsweep"));
  const ConvergenceResult t = convergence_study(preset("testbed-merton-tsweep"));
  auto list = [](const ConvergenceResult& c) {
    std::string s;
    for (std::size_t i = 0; i < c.points.size(); ++i)
      s += (i ? ", " : "") + num(c.points[i], 3) + ":" + num(c.errors[i], 3);
    return s;
  };
  const bool okn = n.slope >= -1.5 && n.slope <= -0.5;
  const bool okt = t.slope >= 1.4 && t.slope <= 2.6;
  return {okn && okt, "N-slope " + num(n.slope, 3) + " (" + list(n) + "); T-slope " +
                          num(t.slope, 3) + " (" + list(t) + ")"};
}

Outcome c8() {
  // The property suites live in the unit test binary; run them by name.
  const std::vector<std::string> suites = {
      "gradient checks*",
      "Fenchel-Young*",
      "support function is positively homogeneous",
      "hard projections land in the set",
      "L1 is nonnegative and vanishes at the terminal condition",
      "controls stay admissible along simulated paths",
      "dual state is exactly linear in y along fixed increments",
      "training is byte-reproducible",
      "training and bounds are deterministic",
      "increments are a pure function of their key",
      "initialisation is seed-determined",
  };
  bool ok = true;
  std::string failed;
  int cases = 0;
  for (const auto& s : suites) {
    const std::string cmd = std::string("\"") + DEEPSC_UNIT_TESTS + "\" --test-case=\"" + s +
                            "\" --no-intro --no-version 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return {false, "cannot run " + std::string(DEEPSC_UNIT_TESTS)};
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = pclose(pipe);
    int n = 0, passed = 0;
    const auto pos = out.find("test cases:");
    if (pos != std::string::npos) std::sscanf(out.c_str() + pos, "test cases: %d | %d passed", &n, &passed);
    if (status != 0 || n == 0 || passed != n) {
      ok = false;
      failed += " '" + s + "'";
    }
    cases += n;
  }
  return {ok, std::to_string(suites.size()) + " suites, " + std::to_string(cases) + " test cases" +
                  (failed.empty() ? "" : "; failed:" + failed)};
}

Outcome c9() {
  // exact closed-form processes
  const ExperimentConfig cfg = preset("example1-nonhara");
  const MarketCoefficients mc = market_coefficients(cfg);
  const NonHaraSolution s = nonhara_value(mc, cfg.x0, cfg.T);
  const Vector theta = mc.theta(0.0);
  const IncrementGenerator gen(cfg.seeds.eval, false);
  const Eigen::Index k = 1024;
  const double dt = cfg.T / cfg.N;
  std::vector<Matrix> X, V1, Z1, Y, V2, Z2;
  Eigen::VectorXd thW = Eigen::VectorXd::Zero(k);
  for (int i = 0; i <= cfg.N; ++i) {
    if (i > 0) thW += std::sqrt(dt) * gen.batch(0, k, i - 1, cfg.market.m) * theta;
    Matrix x(k, 1), v1(k, 1), z1(k, 1), y(k, 1), v2(k, 1), z2(k, 1);
    for (Eigen::Index p = 0; p < k; ++p) {
      const double t = i * dt;
      y(p) = s.Y(t, thW(p));
      z2(p) = s.Z2(t, thW(p));
      v2(p) = s.V2(t, thW(p));
      x(p) = -z2(p);
      v1(p) = s.primal_value(t, x(p));
      z1(p) = s.primal_dx(t, x(p));
    }
    X.push_back(x);
    V1.push_back(v1);
    Z1.push_back(z1);
    Y.push_back(y);
    V2.push_back(v2);
    Z2.push_back(z2);
  }
  const DualityResiduals exact = duality_relation_check(X, V1, Z1, Y, V2, Z2, cfg.x0);

  Example1& ex = example1();
  if (!ex.error.empty()) return {false, "closed form " + num(exact.max(), 3) + "; " + ex.error};
  const auto dW = IncrementGenerator(cfg.seeds.eval).path_batch(0, k, cfg.N, cfg.market.m);
  const Trajectories a = ex.primal.simulate(dW), b = ex.dual.simulate(dW);
  const DualityResiduals trained = duality_relation_check(a.X, a.V, a.Z, b.X, b.V, b.Z, cfg.x0);
  const bool ok = exact.max() < 1e-10 && trained.max() < 0.05;
  return {ok, "closed form " + num(exact.max(), 3) + "; trained " + trained.to_json().dump()};
}

Outcome c10() {
  std::cout << "  declared not reproducible at desk scale:\n"
            << "    - 100k-iteration m=50 cone-Merton errors (preset example2-cone-merton --full)\n"
            << "    - 10-stock non-HARA Heston table values: no ground truth, consistency only\n"
            << "    - absolute runtimes: hardware-dependent, only the C7 trends are asserted\n";
  const ResultRecord r = run_experiment(preset("heston-nonhara-10stock"));
  if (!r.error.empty()) return {false, r.error};
  const bool ok = r.checks.value("primal_le_smp_mid_le_dual", false);
  return {ok, "primal MC " + num(r.primal.mc, 6) + " +- " + num(r.primal.mc_se, 2) +
                  " <= SMP midpoint " + num(r.smp->midpoint(), 6) + " [" +
                  num(r.smp->u_low, 6) + ", " + num(r.smp->u_high, 6) + "] <= dual MC " +
                  num(r.dual.mc, 6) + " +- " + num(r.dual.mc_se, 2) + "; " +
                  num(r.seconds, 4) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"C1", c1}, {"C2", c2}, {"C3", c3}, {"C4", c4}, {"C5", c5},
      {"C6", c6}, {"C7", c7}, {"C8", c8}, {"C9", c9}, {"C10", c10}};
  const std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << " " << o.detail << std::endl;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
