// ma2ml: command-line front end for multi-agent pipeline search.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "ma2ml/commands.hpp"
#include "ma2ml/config.hpp"
#include "ma2ml/error.hpp"

namespace fs = std::filesystem;
using namespace ma2ml;

namespace {

// Flags shared by `search` and `compare`; each mirrors an MA2ML_* variable.
struct RunFlags {
  std::string config;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_iter;
  std::optional<std::string> out;
  std::optional<std::string> oracle;
  std::optional<double> flops_constraint;
  std::optional<double> w;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "Run config (JSON)")->required()->envname("MA2ML_CONFIG");
    app.add_option("--variant", variant, "ma2ml | lite | onpolicy")->envname("MA2ML_VARIANT");
    app.add_option("--seed", seed, "Root seed")->envname("MA2ML_SEED");
    app.add_option("--max-iter", max_iter, "Iteration budget")->envname("MA2ML_MAX_ITER");
    app.add_option("--out", out, "Output directory")->envname("MA2ML_OUT");
    app.add_option("--oracle", oracle, "separable | coupled | tabular:PATH | exec:CMD")->envname("MA2ML_ORACLE");
    app.add_option("--flops-constraint", flops_constraint, "Cost constraint of the multi-objective reward")
        ->envname("MA2ML_FLOPS_CONSTRAINT");
    app.add_option("--w", w, "Cost exponent of the multi-objective reward (negative)")->envname("MA2ML_W");
  }

  RunConfig resolve() const {
    RunConfig c = load_run_config(config);
    if (variant) c.variant = parse_variant(*variant);
    if (seed) c.hyper.seed = *seed;
    if (max_iter) c.hyper.max_iter = *max_iter;
    if (out) c.out_dir = *out;
    if (oracle) apply_oracle_spec(c, *oracle);
    if (flops_constraint || w) {
      MultiObjectiveSpec m = c.objective.value_or(MultiObjectiveSpec{});
      if (flops_constraint) m.constraint = *flops_constraint;
      if (w) m.w = *w;
      try {
        m.validate();
      } catch (const ValidationError& e) {
        throw ConfigError(e.what());
      }
      c.objective = m;
    }
    try {
      c.hyper.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    return c;
  }
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_compare(const CompareResult& r, std::ostream& out) {
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %6s %12s %12s %14s %8s %12s %12s\n", "variant", "seeds", "mean_topk",
                "median_topk", "median_evals", "reached", "ref>=topk", "ref<evals");
  out << line;
  for (std::size_t k = 0; k < r.summary.size(); ++k) {
    const auto& s = r.summary[k];
    const std::string a = k ? std::to_string(s.reference_topk_wins) + "/" + std::to_string(s.seeds) : "-";
    const std::string b = k ? std::to_string(s.reference_evals_wins) + "/" + std::to_string(s.seeds) : "-";
    std::snprintf(line, sizeof line, "%-10s %6zu %12.6f %12.6f %14.1f %8zu %12s %12s\n", to_string(s.variant).c_str(),
                  s.seeds, s.mean_final_topk, s.median_final_topk, s.median_evals_to_threshold, s.reached_threshold,
                  a.c_str(), b.c_str());
    out << line;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent search over ML pipeline configurations"};
  app.require_subcommand(1);

  SearchOptions search_opts;
  std::size_t stop_after = 0;

  auto* search = app.add_subcommand("search", "Run one search and write logs, top-k report and checkpoint");
  RunFlags search_flags;
  search_flags.attach(*search);
  search->add_option("--stop-after", stop_after, "Stop after N iterations, leaving a resumable checkpoint");
  search->add_flag("--quiet", search_opts.quiet, "Suppress per-iteration progress");

  auto* compare = app.add_subcommand("compare", "Run several variants over paired seeds");
  RunFlags compare_flags;
  compare_flags.attach(*compare);
  std::string variants = "ma2ml,lite,onpolicy";
  std::size_t seeds = 20;
  std::uint64_t first_seed = 0;
  double threshold = 0.95;
  compare->add_option("--variants", variants, "Comma-separated variants; the first is the reference")
      ->envname("MA2ML_VARIANTS");
  compare->add_option("--seeds", seeds, "Number of paired seeds")->envname("MA2ML_SEEDS");
  compare->add_option("--first-seed", first_seed, "First seed of the range");
  compare->add_option("--threshold", threshold, "Fraction of the brute-force optimum for evaluations-to-threshold");

  auto* certify = app.add_subcommand("certify", "Check monotonic improvement of exact divergence iteration");
  CertifyConfig cert;
  std::optional<std::string> cert_out;
  certify->add_option("--lambda", cert.lambda, "Divergence coefficient (> 0)")->envname("MA2ML_LAMBDA");
  certify->add_option("--agents", cert.agents, "Number of agents");
  certify->add_option("--actions", cert.actions, "Actions per agent");
  certify->add_option("--seeds", cert.seeds, "Number of random reward tables")->envname("MA2ML_SEEDS");
  certify->add_option("--first-seed", cert.first_seed, "First table seed");
  certify->add_option("--iterations", cert.iterations, "Divergence iterations per table");
  certify->add_option("--sweeps", cert.sweeps, "Coordinate-ascent sweeps per iteration");
  certify->add_option("--out", cert_out, "Directory for certify.csv")->envname("MA2ML_OUT");

  auto* resume = app.add_subcommand("resume", "Continue an interrupted run from its manifest");
  std::string manifest;
  resume->add_option("manifest", manifest, "Path to manifest.json")->required();
  resume->add_option("--stop-after", stop_after, "Stop after N more iterations");
  resume->add_flag("--quiet", search_opts.quiet, "Suppress per-iteration progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (stop_after > 0) search_opts.stop_after = stop_after;

  try {
    if (search->parsed()) return run_search_command(search_flags.resolve(), search_opts, std::cerr);

    if (resume->parsed()) return resume_command(manifest, search_opts, std::cerr);

    if (compare->parsed()) {
      const RunConfig base = compare_flags.resolve();
      if (seeds == 0) {
        std::cerr << "error: --seeds must be at least 1\n";
        return kExitUsage;
      }
      std::vector<Variant> vs;
      for (const auto& name : split_list(variants)) vs.push_back(parse_variant(name));
      std::vector<std::uint64_t> seed_list;
      for (std::size_t k = 0; k < seeds; ++k) seed_list.push_back(first_seed + k);
      const CompareResult r = compare_variants(base, vs, seed_list, threshold);
      fs::create_directories(base.out_dir);
      write_compare_curves(base.out_dir / "curves.csv", r, base.hyper.topk);
      write_compare_summary(base.out_dir / "summary.csv", r);
      print_compare(r, std::cout);
      return kExitOk;
    }

    if (certify->parsed()) {
      if (!(cert.lambda > 0.0)) {
        std::cerr << "error: --lambda must be > 0 (lambda = 0 has no divergence regularizer to certify)\n";
        return kExitUsage;
      }
      const CertifySummary s = certify_random_tables(cert);
      const bool ok = s.monotone == s.results.size();
      if (cert_out) {
        fs::create_directories(*cert_out);
        write_certify_csv(fs::path(*cert_out) / "certify.csv", s, false);
      }
      std::printf("tables %zu  monotone %zu/%zu  converged %zu/%zu  within %.3g of optimum %zu/%zu  max gap %.3g\n",
                  s.results.size(), s.monotone, s.results.size(), s.converged, s.results.size(), cert.near_optimal,
                  s.near_optimal, s.results.size(), s.max_normalized_gap);
      if (!ok) {
        const fs::path out = fs::path(cert_out.value_or(".")) / "certify_violations.csv";
        write_certify_csv(out, s, true);
        for (const auto& r : s.results)
          if (!r.report.monotone)
            std::fprintf(stderr, "violation: seed %llu at k=%zu: %s\n", static_cast<unsigned long long>(r.seed),
                         *r.report.violation_k, r.report.violation.c_str());
        std::fprintf(stderr, "failing trajectories written to %s\n", out.c_str());
        return kExitViolation;
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitAborted;
  }
  return kExitUsage;
}
