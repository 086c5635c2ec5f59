#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mesa/climb.hpp"
#include "mesa/errors.hpp"
#include "mesa/harness.hpp"
#include "mesa/subspace.hpp"
#include "mesa/theory.hpp"

namespace py = pybind11;
using namespace mesa;

namespace {

theory::Strategy strategy_from(const std::string& name, double epsilon) {
  if (name == "uniform") return theory::Strategy::uniform();
  if (name == "structured") return theory::Strategy::structured();
  if (name == "eps_greedy") return theory::Strategy::eps_greedy(epsilon);
  if (name == "eps_decay") return theory::Strategy::eps_decay();
  fail(ErrorKind::kInvalidArgument, "unknown strategy '" + name + "'");
}

climb::ClimbTaskSpec one_step(int n, int U, int k, int u, double delta) {
  climb::ClimbTaskSpec s;
  s.n = n;
  s.U = U;
  s.delta = delta;
  s.stages = {{k, u}};
  s.validate();
  return s;
}

py::dict summary_dict(const harness::SummaryRow& r) {
  py::dict d;
  d["arm"] = r.arm;
  d["metric"] = r.metric;
  d["seeds"] = r.seeds;
  d["values"] = r.values;
  d["mean"] = r.mean;
  d["std"] = r.stddev;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Meta-exploration for cooperative multi-agent learning (C++ core)";

  static py::exception<Error> error(m, "MesaError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error.ptr())(std::string(to_string(e.kind())) + ": " +
                                                                       e.what());
      exc.attr("kind") = to_string(e.kind());
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def("stage_reward",
        [](int n, int k, int u, double delta, const std::vector<int>& actions) {
          return climb::stage_reward(n, {k, u}, delta, actions);
        },
        py::arg("n"), py::arg("k"), py::arg("u"), py::arg("delta"), py::arg("actions"));

  m.def("classify_equilibria",
        [](int n, int U, int k, int u, double delta) {
          const auto c = climb::classify_equilibria(one_step(n, U, k, u, delta));
          py::dict d;
          d["optimal"] = c.optimal;
          d["suboptimal_ne"] = c.suboptimal_ne;
          d["zero_ne"] = c.zero_ne;
          return d;
        },
        py::arg("n"), py::arg("U"), py::arg("k"), py::arg("u"), py::arg("delta") = 0.5);

  m.def("densify",
        [](const std::vector<double>& rewards, double gamma) { return subspace::densify_trajectory(rewards, gamma); },
        py::arg("rewards"), py::arg("gamma") = 0.05);

  m.def("criterion_holds",
        [](double f0, double f1, double f2, int U, double lambda, double delta) {
          return theory::criterion_holds(theory::make_profile(f0, f1, f2, U, lambda), 1.0, delta);
        },
        py::arg("f0"), py::arg("f1"), py::arg("f2"), py::arg("U"), py::arg("lam"), py::arg("delta"));

  m.def("min_exploration_steps",
        [](const std::string& strategy, int U, double delta, double epsilon, double sigma_w, double sigma_e) {
          const auto r = theory::min_exploration_steps(strategy_from(strategy, epsilon), U, delta, sigma_w, sigma_e);
          return py::make_tuple(r.steps, r.unbounded);
        },
        py::arg("strategy"), py::arg("U"), py::arg("delta"), py::arg("epsilon") = 0.0, py::arg("sigma_w") = 1.0,
        py::arg("sigma_e") = 1.0);

  m.def("uniform_lambda_threshold", &theory::uniform_lambda_threshold, py::arg("U"), py::arg("delta"));

  m.def("parse_config",
        [](const std::string& path) {
          const KvDoc doc = harness::to_doc(harness::parse_config(path));
          py::dict d;
          for (const auto& k : doc.keys()) d[py::str(k)] = *doc.get(k);
          return d;
        },
        py::arg("path"));

  m.def("run",
        [](const std::string& command, const std::string& config, std::optional<std::uint64_t> seed,
           std::optional<std::string> out) {
          harness::RunConfig cfg = harness::parse_config(config);
          harness::apply_overrides(cfg, {seed, out});
          std::vector<harness::SummaryRow> rows;
          std::ostringstream log;
          {
            py::gil_scoped_release release;
            rows = harness::run_experiment(cfg, harness::command_from_string(command), log);
          }
          py::list out_rows;
          for (const auto& r : rows) out_rows.append(summary_dict(r));
          return out_rows;
        },
        py::arg("command"), py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
}
