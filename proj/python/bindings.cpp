#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ma2ml/commands.hpp"
#include "ma2ml/config.hpp"
#include "ma2ml/error.hpp"
#include "ma2ml/oracle.hpp"
#include "ma2ml/policy.hpp"
#include "ma2ml/space.hpp"
#include "ma2ml/verify.hpp"

namespace py = pybind11;
using namespace ma2ml;

namespace {

RunConfig resolve(const std::string& config_path, std::optional<std::string> out, std::optional<std::uint64_t> seed,
                  std::optional<std::string> variant, std::optional<std::size_t> max_iter,
                  std::optional<std::string> oracle) {
  RunConfig c = load_run_config(config_path);
  if (out) c.out_dir = *out;
  if (seed) c.hyper.seed = *seed;
  if (variant) c.variant = parse_variant(*variant);
  if (max_iter) c.hyper.max_iter = *max_iter;
  if (oracle) apply_oracle_spec(c, *oracle);
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the ma2ml package";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::class_<JointSpace>(m, "Space")
      .def(py::init([](const std::string& text) { return parse_space(text); }), py::arg("config_text"))
      .def_property_readonly("num_agents", &JointSpace::num_agents)
      .def_property_readonly("num_dimensions", &JointSpace::num_dimensions)
      .def_property_readonly("agent_names",
                             [](const JointSpace& s) {
                               std::vector<std::string> names;
                               for (const auto& a : s.agents()) names.push_back(a.name);
                               return names;
                             })
      .def("log10_cardinality", [](const JointSpace& s) { return log10_cardinality(s); })
      .def("agent_log10_cardinality", &JointSpace::agent_log10_cardinality, py::arg("agent"))
      .def("joint_action_count", &JointSpace::joint_action_count)
      .def("fingerprint", &JointSpace::fingerprint)
      .def("to_json", [](const JointSpace& s) { return serialize_space(s); })
      .def(
          "decode", [](const JointSpace& s, const std::string& key) {
            return decode_action(s, parse_action_key(s, key)).dump();
          },
          py::arg("action_key"), "Decoded pipeline (JSON text) of a semicolon-joined action key")
      .def(
          "sample",
          [](const JointSpace& s, std::uint64_t seed, std::size_t n) {
            Rng rng(seed);
            const PolicyParams p = init_uniform(s);
            std::vector<std::string> keys;
            for (std::size_t k = 0; k < n; ++k) keys.push_back(action_key(ma2ml::sample(p, rng).action));
            return keys;
          },
          py::arg("seed"), py::arg("n"), "Action keys drawn from the uniform policy");

  m.def("multi_objective_reward",
        [](double accuracy, double cost, double constraint, double w) {
          OracleResult r;
          r.accuracy = accuracy;
          r.cost = cost;
          return multi_objective_reward(r, MultiObjectiveSpec{w, constraint});
        },
        py::arg("accuracy"), py::arg("cost"), py::arg("constraint") = 600e6, py::arg("w") = -0.07);

  m.def("tilt_best_response", &verify::tilt_best_response, py::arg("target"), py::arg("qbar"), py::arg("lam"));

  m.def(
      "search",
      [](const std::string& config, std::optional<std::string> out, std::optional<std::uint64_t> seed,
         std::optional<std::string> variant, std::optional<std::size_t> max_iter, std::optional<std::string> oracle,
         std::optional<std::size_t> stop_after) {
        const RunConfig c = resolve(config, out, seed, variant, max_iter, oracle);
        SearchOptions o;
        o.quiet = true;
        o.stop_after = stop_after;
        std::ostringstream log;
        py::gil_scoped_release nogil;
        return run_search_command(c, o, log);
      },
      py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(), py::arg("variant") = py::none(),
      py::arg("max_iter") = py::none(), py::arg("oracle") = py::none(), py::arg("stop_after") = py::none(),
      "Runs one search; returns the command exit status (0 ok, 2 config error, 3 aborted).");

  m.def(
      "resume",
      [](const std::string& manifest) {
        SearchOptions o;
        o.quiet = true;
        std::ostringstream log;
        py::gil_scoped_release nogil;
        return resume_command(manifest, o, log);
      },
      py::arg("manifest"));

  m.def(
      "compare",
      [](const std::string& config, std::vector<std::string> variants, std::size_t seeds,
         std::optional<std::size_t> max_iter, double threshold) {
        RunConfig c = load_run_config(config);
        if (max_iter) c.hyper.max_iter = *max_iter;
        std::vector<Variant> vs;
        for (const auto& v : variants) vs.push_back(parse_variant(v));
        std::vector<std::uint64_t> seed_list;
        for (std::size_t k = 0; k < seeds; ++k) seed_list.push_back(k);
        CompareResult r;
        {
          py::gil_scoped_release nogil;
          r = compare_variants(c, vs, seed_list, threshold);
        }
        py::list rows;
        for (const auto& s : r.summary) {
          py::dict d;
          d["variant"] = to_string(s.variant);
          d["seeds"] = s.seeds;
          d["mean_final_topk"] = s.mean_final_topk;
          d["median_final_topk"] = s.median_final_topk;
          d["median_evals_to_threshold"] = s.median_evals_to_threshold;
          d["reached_threshold"] = s.reached_threshold;
          d["reference_topk_wins"] = s.reference_topk_wins;
          d["reference_evals_wins"] = s.reference_evals_wins;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("variants") = std::vector<std::string>{"ma2ml", "lite", "onpolicy"},
      py::arg("seeds") = 20, py::arg("max_iter") = py::none(), py::arg("threshold") = 0.95);

  m.def(
      "certify",
      [](double lam, std::size_t agents, std::size_t actions, std::size_t seeds, std::size_t iterations,
         std::size_t sweeps) {
        CertifyConfig c;
        c.lambda = lam;
        c.agents = agents;
        c.actions = actions;
        c.seeds = seeds;
        c.iterations = iterations;
        c.sweeps = sweeps;
        CertifySummary s;
        {
          py::gil_scoped_release nogil;
          s = certify_random_tables(c);
        }
        py::dict d;
        d["tables"] = s.results.size();
        d["monotone"] = s.monotone;
        d["converged"] = s.converged;
        d["near_optimal"] = s.near_optimal;
        d["max_normalized_gap"] = s.max_normalized_gap;
        return d;
      },
      py::arg("lam") = 0.2, py::arg("agents") = 3, py::arg("actions") = 6, py::arg("seeds") = 50,
      py::arg("iterations") = 200, py::arg("sweeps") = 3);
}
