#include "deepsc/harness.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace deepsc;
using nlohmann::json;

namespace {

// Configurations and records cross the boundary as JSON text; the Python
// wrapper converts to and from dicts.
ExperimentConfig parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(e.what());
  }
  ExperimentConfig c = ExperimentConfig::from_json(j);
  c.validate();
  return c;
}

std::string records_json(const std::vector<ResultRecord>& recs) {
  json a = json::array();
  for (const auto& r : recs) a.push_back(r.to_json());
  return a.dump();
}

}  // namespace

PYBIND11_MODULE(_deepsc, m) {
  m.doc() = "Deep 2BSDE and SMP solvers for constrained utility maximisation";

  m.def("preset_names", &preset_names);
  m.def("preset", [](const std::string& name, bool full) { return preset(name, full).to_json().dump(); },
        py::arg("name"), py::arg("full") = false);
  m.def("validate_config", [](const std::string& text) { return parse(text).to_json().dump(); });
  m.def("oracle", [](const std::string& text) -> py::object {
    const auto o = oracle_for(parse(text));
    if (!o) return py::none();
    return py::str(o->to_json().dump());
  });
  m.def("run_experiment", [](const std::string& text) {
    const ExperimentConfig c = parse(text);
    py::gil_scoped_release nogil;
    return run_experiment(c).to_json().dump();
  });
  m.def("convergence_study", [](const std::string& text) {
    const ExperimentConfig c = parse(text);
    ConvergenceResult r;
    {
      py::gil_scoped_release nogil;
      r = convergence_study(c);
    }
    json j = r.to_json();
    j["records"] = json::parse(records_json(r.records));
    return j.dump();
  });
  m.def("methodology_sweep", [](const std::string& text) {
    const ExperimentConfig c = parse(text);
    MethodologyResult r;
    {
      py::gil_scoped_release nogil;
      r = methodology_sweep(c);
    }
    json j = r.to_json();
    j["records"] = json::parse(records_json(r.records));
    return j.dump();
  });
  m.def("emit_results", [](const std::string& records, const std::string& dir) {
    std::vector<ResultRecord> recs;
    for (const auto& r : json::parse(records)) recs.push_back(ResultRecord::from_json(r));
    return emit_results(recs, dir);
  });
  m.def("loglog_slope", &loglog_slope);

  m.def(
      "heston_riccati_value",
      [](double p, double x0, double T, double r, double A, double kappa, double long_run,
         double xi, double rho, double v0, int steps) {
        HestonParams h{r, A, kappa, long_run, xi, rho, v0};
        return heston_riccati_value(h, p, x0, T, steps);
      },
      py::arg("p") = 0.5, py::arg("x0") = 1.0, py::arg("T") = 0.2, py::arg("r") = 0.05,
      py::arg("A") = 0.5, py::arg("kappa") = 1.0, py::arg("long_run") = 0.05,
      py::arg("xi") = 0.5, py::arg("rho") = -0.5, py::arg("v0") = 0.5,
      py::arg("steps") = 10000);
  m.def(
      "nonhara_solution",
      [](double r, double theta_sq, double x0, double T) {
        return NonHaraSolution(r, theta_sq, x0, T).solution().to_json().dump();
      },
      py::arg("r"), py::arg("theta_sq"), py::arg("x0"), py::arg("T"));

  m.def(
      "utility",
      [](const std::string& kind, double x, double p) {
        const Derivs d = u_eval(utility_from_name(kind, p), x);
        return py::make_tuple(d.value, d.d1, d.d2);
      },
      py::arg("kind"), py::arg("x"), py::arg("p") = 0.5);
  m.def(
      "dual_utility",
      [](const std::string& kind, double y, double p) {
        const Derivs d = dual_eval(utility_from_name(kind, p), y);
        return py::make_tuple(d.value, d.d1, d.d2);
      },
      py::arg("kind"), py::arg("y"), py::arg("p") = 0.5);

  m.def(
      "brownian_increments",
      [](std::uint64_t seed, std::uint64_t first_path, Eigen::Index paths, int steps, int dim,
         bool antithetic, int substeps) {
        const IncrementGenerator g(seed, antithetic, substeps);
        return g.path_batch(first_path, paths, steps, dim);
      },
      py::arg("seed"), py::arg("first_path"), py::arg("paths"), py::arg("steps"),
      py::arg("dim"), py::arg("antithetic") = true, py::arg("substeps") = 1);

  m.def(
      "project",
      [](const std::string& kind, const Eigen::VectorXd& x, double radius) {
        const int n = static_cast<int>(x.size());
        ConstraintSet s = kind == "full"   ? ConstraintSet::full(n)
                          : kind == "cone" ? ConstraintSet::cone(n)
                          : kind == "ball" ? ConstraintSet::ball(n, radius)
                                           : throw std::invalid_argument("unknown set: " + kind);
        return Eigen::VectorXd(project_hard(s, x));
      },
      py::arg("kind"), py::arg("x"), py::arg("radius") = 1.0);
}
