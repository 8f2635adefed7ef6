#include <sstream>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hwplan/batch_qp.hpp"
#include "hwplan/bench.hpp"
#include "hwplan/episode.hpp"
#include "hwplan/errors.hpp"
#include "hwplan/planners.hpp"

namespace py = pybind11;
using namespace hwplan;

namespace {

BasisFamily family_from(const std::string& name) {
  if (name == "legendre") return BasisFamily::Legendre;
  if (name == "monomial") return BasisFamily::Monomial;
  throw InvalidArgument("basis family must be 'legendre' or 'monomial'");
}

py::dict sampled(const SampledTrajectory& s) {
  py::dict d;
  d["x"] = s.x;
  d["y"] = s.y;
  d["xdot"] = s.xdot;
  d["ydot"] = s.ydot;
  d["xddot"] = s.xddot;
  d["yddot"] = s.yddot;
  return d;
}

Eigen::MatrixXd solve_qp(const PolynomialBasis& basis, const Eigen::MatrixXd& params, int segments,
                         const InitialState& b0) {
  const BehaviorLayout layout{segments, false};
  if (params.rows() != layout.dim()) throw InvalidArgument("params must have 2 * segments rows");
  const QPStructure qp(basis, TrackingGains{}, false);
  return solve_batch(qp, assemble_rhs(qp, layout, params, b0)).xi;
}

py::dict episode(const std::string& scenario_json, const std::string& kind, const std::string& planner_json,
                 int replan_stride) {
  const ScenarioConfig sc = scenario_from_json(scenario_json);
  auto planner = make_planner(kind, planner_config_from_json(planner_json));
  EpisodeLog log;
  {
    py::gil_scoped_release release;
    log = run_episode(sc, *planner, replan_stride);
  }
  std::ostringstream jsonl;
  write_episode_log(log, jsonl);
  py::dict d;
  d["collision"] = log.collision;
  d["collision_step"] = log.collision_step;
  d["lane_departure"] = log.lane_departure;
  d["failed"] = log.failed;
  d["termination"] = log.termination;
  d["steps"] = static_cast<int>(log.steps.size());
  d["mean_speed"] = log.mean_speed();
  d["log"] = jsonl.str();
  return d;
}

py::dict suite(const std::string& suite_json, const std::string& base_dir) {
  const BenchmarkSuite s = suite_from_json(suite_json, base_dir);
  SuiteResult r;
  {
    py::gil_scoped_release release;
    r = run_suite(s);
  }
  std::ostringstream metrics, episodes;
  write_metrics_csv(r.rows, metrics);
  write_episodes_csv(r.episodes, episodes);
  py::dict d;
  d["metrics_csv"] = metrics.str();
  d["episodes_csv"] = episodes.str();
  d["manifest"] = run_manifest(s, r);
  d["any_numerical_failure"] = r.any_numerical_failure;
  return d;
}

py::list trace(int batch_size, int constraint_elite, int elite, int iterations, double gamma, std::uint64_t seed) {
  BiLevelConfig c;
  c.batch_size = batch_size;
  c.constraint_elite = constraint_elite;
  c.elite = elite;
  c.iterations = iterations;
  c.gamma = gamma;
  c.seed = seed;
  const PolynomialBasis basis = build_basis(10, 50, 10.0);
  std::vector<IterationDiagnostics> rows;
  {
    py::gil_scoped_release release;
    rows = emit_convergence_trace(canonical_static_scene(), basis, TrackingGains{}, c);
  }
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["iteration"] = r.iteration;
    d["elite_mean_upper_cost"] = r.elite_mean_upper_cost;
    d["elite_mean_augmented_cost"] = r.elite_mean_augmented_cost;
    d["cov_trace_sampled"] = r.cov_trace_sampled;
    d["cov_trace"] = r.cov_trace;
    d["residual_median"] = r.residual_median;
    d["feasible_fraction"] = r.feasible_fraction;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_hwplan, m) {
  m.doc() = "Batch bi-level trajectory planning for highway driving";
  m.attr("__version__") = "0.1.0";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericalFailure>(m, "NumericalFailure", PyExc_RuntimeError);

  py::class_<PolynomialBasis>(m, "PolynomialBasis")
      .def_readonly("order", &PolynomialBasis::order)
      .def_readonly("horizon", &PolynomialBasis::horizon)
      .def_readonly("times", &PolynomialBasis::times)
      .def_readonly("W", &PolynomialBasis::W)
      .def_readonly("Wdot", &PolynomialBasis::Wdot)
      .def_readonly("Wddot", &PolynomialBasis::Wddot);

  m.def(
      "build_basis",
      [](int order, int num_samples, double horizon, const std::string& family) {
        return build_basis(order, num_samples, horizon, family_from(family));
      },
      py::arg("order") = 10, py::arg("num_samples") = 50, py::arg("horizon") = 10.0,
      py::arg("family") = "legendre");

  py::class_<InitialState>(m, "InitialState")
      .def(py::init([](double x, double y, double vx, double vy, double ax, double ay) {
             return InitialState{x, y, vx, vy, ax, ay};
           }),
           py::arg("x") = 0.0, py::arg("y") = 0.0, py::arg("vx") = 0.0, py::arg("vy") = 0.0, py::arg("ax") = 0.0,
           py::arg("ay") = 0.0)
      .def_readwrite("x", &InitialState::x)
      .def_readwrite("y", &InitialState::y)
      .def_readwrite("vx", &InitialState::vx)
      .def_readwrite("vy", &InitialState::vy)
      .def_readwrite("ax", &InitialState::ax)
      .def_readwrite("ay", &InitialState::ay);

  m.def("solve_qp_batch", &solve_qp, py::arg("basis"), py::arg("params"), py::arg("segments") = 4,
        py::arg("initial") = InitialState{},
        "Lower-level QP for each column of params ([y_d(1..S), v_d(1..S)] x batch); returns stacked (cx, cy).");

  m.def(
      "eval_trajectory",
      [](const PolynomialBasis& basis, const Eigen::VectorXd& xi) {
        if (xi.size() != 2 * basis.num_coeffs()) throw InvalidArgument("xi must hold 2 * (order + 1) coefficients");
        return sampled(eval_trajectory(basis, TrajectoryCoeffs::from_stacked(xi)));
      },
      py::arg("basis"), py::arg("xi"));

  m.def("planner_kinds", &planner_kinds);
  m.def("scenario_defaults", [] { return scenario_to_json(ScenarioConfig{}); });
  m.def("run_episode", &episode, py::arg("scenario_json"), py::arg("planner"), py::arg("planner_json") = "{}",
        py::arg("replan_stride") = 5);
  m.def("run_suite", &suite, py::arg("suite_json"), py::arg("base_dir") = "");
  m.def("convergence_trace", &trace, py::arg("batch_size") = 1000, py::arg("constraint_elite") = 150,
        py::arg("elite") = 50, py::arg("iterations") = 5, py::arg("gamma") = 0.9, py::arg("seed") = 0);
  m.def("content_hash", &content_hash);
}
