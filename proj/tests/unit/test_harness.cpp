#include "deepsc/harness.hpp"

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace deepsc;
using nlohmann::json;

namespace {

ExperimentConfig parse(const std::string& text) {
  ExperimentConfig c = ExperimentConfig::from_json(json::parse(text));
  c.validate();
  return c;
}

ExperimentConfig bond_config() {
  return parse(R"({"name": "bond", "constraint": "bond", "solver": "both-2bsde", "T": 0.5,
                   "N": 4, "iterations": 300, "batch": 16, "eval_paths": 1024,
                   "tolerance": 0.001})");
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("deepsc_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("minimal configuration gets defaults") {
  const auto c = parse(R"({"name": "x"})");
  CHECK(c.N == 10);
  CHECK(c.market.kind == "black-scholes");
  CHECK(c.utility.kind == UtilityKind::Power);
  CHECK(c.solver == SolverKind::Primal2Bsde);
  CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("configuration errors are rejected before any work") {
  CHECK_THROWS_AS(parse(R"({"name": "x", "iteratons": 5})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "market": {"knd": "heston"}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "N": 0})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "N": "ten"})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "market": {"kind": "pathdep"}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "market": {"kind": "heston"}, "constraint": "cone"})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "constraint": {"kind": "cone", "soft": true}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "schedule": {"control_rate": 0.1, "bsde_rate": 0.01}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "batch": 9})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"name": "x", "solver": "dp"})"), std::invalid_argument);
  CHECK_THROWS(preset("no-such-preset"));
  CHECK_NOTHROW(parse(R"({"name": "x", "market": {"kind": "pathdep", "m": 2}, "solver": "smp",
                          "constraint": "cone"})"));
}

TEST_CASE("presets validate and carry their market parameters") {
  for (const auto& n : preset_names())
    for (bool full : {false, true}) {
      INFO(n);
      CHECK_NOTHROW(preset(n, full).validate());
    }
  const auto ex1 = preset("example1-nonhara");
  CHECK(ex1.market.kind == "example1");
  CHECK(ex1.market.m == 5);
  CHECK(ex1.utility.kind == UtilityKind::NonHara);
  CHECK(ex1.N == 20);
  CHECK(preset("example1-nonhara", true).N == 50);
  const auto h = preset("heston-power");
  CHECK(h.market.heston.A == 0.5);
  CHECK(h.market.heston.rho == -0.5);
  CHECK(oracle_for(h)->value == doctest::Approx(2.03289).epsilon(1e-5));
}

TEST_CASE("log-log slope") {
  CHECK(loglog_slope({1, 2, 4, 8}, {1, 0.5, 0.25, 0.125}) == doctest::Approx(-1.0));
  CHECK(loglog_slope({0.1, 0.2, 0.4}, {3e-4, 1.2e-3, 4.8e-3}) == doctest::Approx(2.0));
  CHECK_THROWS(loglog_slope({1}, {1}));
}

TEST_CASE("bond-only run recovers the deterministic value from both sides") {
  const ResultRecord r = run_experiment(bond_config());
  REQUIRE(r.error.empty());
  REQUIRE(r.oracle);
  CHECK(std::abs(r.rel_err.at("primal").get<double>()) < 1e-3);
  CHECK(std::abs(r.rel_err.at("dual").get<double>()) < 1e-3);
  CHECK(r.checks.at("primal_le_dual").get<bool>());
  CHECK(r.passed);
  CHECK(r.headline_error().has_value());
}

TEST_CASE("tolerance failures are named and records round trip") {
  auto c = bond_config();
  c.iterations = 2;
  c.tolerance = 1e-9;
  c.schedule.bsde_rate_initial = 1e-4;
  c.schedule.control_rate_initial = 1e-5;
  c.warm_start = false;
  const ResultRecord r = run_experiment(c);
  CHECK_FALSE(r.passed);
  REQUIRE_FALSE(r.failures.empty());
  CHECK(r.failures.front().find("primal relative error") == 0);
  const json j = r.to_json();
  CHECK(ResultRecord::from_json(j).to_json() == j);

  const auto dir = scratch("emit");
  CHECK_FALSE(emit_results({r}, dir.string()));
  CHECK(std::filesystem::exists(dir / "table.csv"));
  CHECK(std::filesystem::exists(dir / "traces"));
  const auto back = load_results((dir / "results.json").string());
  REQUIRE(back.size() == 1);
  CHECK(back[0].to_json() == j);
  std::filesystem::remove_all(dir);
}

TEST_CASE("emitting an empty result set") {
  const auto dir = scratch("empty");
  CHECK(emit_results({}, dir.string()));
  std::ifstream in(dir / "table.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("name,solver,T,N", 0) == 0);
  CHECK(load_results((dir / "results.json").string()).empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("runs are reproducible apart from timings") {
  auto c = bond_config();
  c.iterations = 20;
  auto strip = [](json j) {
    for (auto* k : {"seconds", "smp_seconds"}) j.erase(k);
    for (auto* s : {"primal", "dual"}) j[s].erase("seconds");
    return j.dump();
  };
  CHECK(strip(run_experiment(c).to_json()) == strip(run_experiment(c).to_json()));
  const auto many = run_many({c, c}, 2);
  CHECK(strip(many[0].to_json()) == strip(many[1].to_json()));
}

TEST_CASE("sweeps") {
  auto c = bond_config();
  c.iterations = 10;
  c.sweep.activation = {"tanh"};
  const MethodologyResult m = methodology_sweep(c);
  REQUIRE(m.rows.size() == 1);
  CHECK(m.rows[0].variant == "activation=tanh");

  auto s = bond_config();
  s.sweep.N = {2, 4};
  CHECK_THROWS(convergence_study(s));  // needs three points
}
