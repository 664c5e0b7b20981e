// Command-line front end: run configurations and presets, sweeps, oracles.

#include "deepsc/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

using namespace deepsc;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<std::uint64_t> coefficient, init, path, eval;
  std::optional<long> iterations;
  std::optional<int> parallelism;
  std::string out;

  void add_to(CLI::App* app) {
    app->add_option("--seed-coefficient", coefficient, "Seed of the random market coefficients");
    app->add_option("--seed-init", init, "Network initialisation seed");
    app->add_option("--seed-path", path, "Training path seed");
    app->add_option("--seed-eval", eval, "Evaluation path seed");
    app->add_option("--iterations", iterations, "Override the iteration budget");
    app->add_option("--parallelism", parallelism, "Concurrent sweep points");
    app->add_option("--out", out, "Output directory (default results/<name>)");
  }

  void apply(ExperimentConfig& c) const {
    if (coefficient) c.seeds.coefficient = *coefficient;
    if (init) c.seeds.init = *init;
    if (path) c.seeds.path = *path;
    if (eval) c.seeds.eval = *eval;
    if (iterations) c.iterations = *iterations;
    if (parallelism) c.parallelism = *parallelism;
    c.validate();
  }

  std::string dir(const ExperimentConfig& c) const {
    return out.empty() ? "results/" + c.name : out;
  }
};

void print_record(const ResultRecord& r) {
  std::printf("%-32s", r.config.name.c_str());
  if (r.primal.ran) std::printf("  primal %.6f", r.primal.value);
  if (r.dual.ran) std::printf("  dual %.6f", r.dual.value);
  if (r.smp) std::printf("  smp [%.6f, %.6f]", r.smp->u_low, r.smp->u_high);
  if (r.oracle) std::printf("  oracle %.6f", *r.oracle);
  if (const auto e = r.headline_error()) std::printf("  rel.err %.3e", *e);
  std::printf("  %.1fs  %s\n", r.seconds, r.passed ? "ok" : "FAILED");
  for (const auto& f : r.failures) std::printf("    failed: %s\n", f.c_str());
}

int finish(const std::vector<ResultRecord>& recs, const std::string& dir, const json& extra) {
  const bool ok = emit_results(recs, dir, extra);
  std::printf("results written to %s\n", dir.c_str());
  return ok ? 0 : 1;
}

int do_run(ExperimentConfig c, const Overrides& ov) {
  ov.apply(c);
  c.sweep = {};
  const ResultRecord r = run_experiment(c);
  print_record(r);
  return finish({r}, ov.dir(c), json::object());
}

int do_sweep(ExperimentConfig c, const Overrides& ov) {
  ov.apply(c);
  if (c.sweep.empty()) throw std::invalid_argument("sweep mode needs nonempty sweep axes");
  std::vector<ResultRecord> all;
  json extra = json::object();
  if (!c.sweep.N.empty() || !c.sweep.T.empty()) {
    ExperimentConfig cc = c;
    cc.sweep.activation.clear();
    cc.sweep.optimizer.clear();
    cc.sweep.m.clear();
    for (const bool byN : {true, false}) {
      ExperimentConfig one = cc;
      if (byN) one.sweep.T.clear();
      else one.sweep.N.clear();
      if (one.sweep.N.empty() && one.sweep.T.empty()) continue;
      const ConvergenceResult res = convergence_study(one);
      for (const auto& r : res.records) print_record(r);
      std::printf("log-log slope of error vs %s: %.3f\n", res.axis.c_str(), res.slope);
      extra["convergence_" + res.axis] = res.to_json();
      all.insert(all.end(), res.records.begin(), res.records.end());
    }
  }
  if (!c.sweep.activation.empty() || !c.sweep.optimizer.empty() || !c.sweep.m.empty()) {
    ExperimentConfig cc = c;
    cc.sweep.N.clear();
    cc.sweep.T.clear();
    const MethodologyResult res = methodology_sweep(cc);
    for (const auto& row : res.rows)
      std::printf("%-28s rel.err %.4e  %.1fs\n", row.variant.c_str(), row.rel_err, row.seconds);
    extra["methodology"] = res.to_json();
    all.insert(all.end(), res.records.begin(), res.records.end());
  }
  return finish(all, ov.dir(c), extra);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep stochastic-control solvers: experiments, sweeps and oracles"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path, preset_name;
  bool full = false;

  auto* run = app.add_subcommand("run", "Run one configuration file");
  run->add_option("config", config_path, "JSON configuration")->required();
  ov.add_to(run);

  auto* pre = app.add_subcommand("preset", "Run a shipped preset (sweeps when it has axes)");
  pre->add_option("name", preset_name, "Preset name")->required();
  pre->add_flag("--full", full, "Use the full iteration budget");
  ov.add_to(pre);

  auto* sweep = app.add_subcommand("sweep", "Run the sweep axes of a configuration file");
  sweep->add_option("config", config_path, "JSON configuration")->required();
  ov.add_to(sweep);

  auto* orc = app.add_subcommand("oracle", "Print the oracle value of a preset");
  orc->add_option("name", preset_name, "Preset name")->required();
  orc->add_flag("--full", full, "Use the full-budget parameters");

  auto* show = app.add_subcommand("show", "Print the effective configuration of a preset");
  show->add_option("name", preset_name, "Preset name")->required();
  show->add_flag("--full", full, "Use the full-budget parameters");

  app.add_subcommand("list", "List the presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("list")) {
      for (const auto& n : preset_names()) std::printf("%s\n", n.c_str());
      return 0;
    }
    if (*show) {
      std::cout << preset(preset_name, full).to_json().dump(2) << "\n";
      return 0;
    }
    if (*orc) {
      const auto o = oracle_for(preset(preset_name, full));
      if (!o) {
        std::fprintf(stderr, "preset %s has no registered oracle\n", preset_name.c_str());
        return 2;
      }
      std::printf("%.10f\n", o->value);
      return 0;
    }
    if (*run) return do_run(load_config(config_path), ov);
    if (*sweep) return do_sweep(load_config(config_path), ov);
    if (*pre) {
      ExperimentConfig c = preset(preset_name, full);
      return c.sweep.empty() ? do_run(c, ov) : do_sweep(c, ov);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
