#include "ma2ml/commands.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include "ma2ml/error.hpp"

namespace ma2ml {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Console only; the CSVs keep full precision.
std::string brief(double v) {
  if (!std::isfinite(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Write-then-rename so readers never see a half-written file.
void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + what + " '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double topk_mean(const RunRecord& record) {
  if (record.topk.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& e : record.topk) s += e.reward;
  return s / static_cast<double>(record.topk.size());
}

}  // namespace

void write_pipelines_csv(const fs::path& path, const RunRecord& record) {
  std::ostringstream out;
  out << "iteration,index,reward,accuracy,cost,actions,status\n";
  for (const auto& p : record.pipelines) {
    out << p.iteration << ',' << p.index << ',' << (p.failed ? "" : num(p.reward)) << ','
        << (p.failed ? "" : num(p.accuracy)) << ',' << (p.cost ? num(*p.cost) : "") << ',' << action_key(p.action)
        << ',' << (p.failed ? "failed" : "ok") << '\n';
  }
  write_file(path, out.str());
}

void write_summary_csv(const fs::path& path, const RunRecord& record, const JointSpace& space) {
  std::ostringstream out;
  out << "iteration,evaluated,failed,batch_mean,batch_max,critic_loss";
  for (const auto& a : space.agents()) out << ",entropy_" << a.name;
  for (const auto& a : space.agents()) out << ",kl_" << a.name;
  out << '\n';
  for (const auto& s : record.iterations) {
    out << s.iteration << ',' << s.evaluated << ',' << s.failed << ',' << num(s.batch_mean) << ','
        << num(s.batch_max) << ',' << num(s.critic_loss);
    for (double h : s.entropy) out << ',' << num(h);
    for (double k : s.kl) out << ',' << num(k);
    out << '\n';
  }
  write_file(path, out.str());
}

ordered_json topk_report(const RunRecord& record, const JointSpace& space) {
  auto rows = [&](const std::vector<PipelineEntry>& entries) {
    ordered_json arr = ordered_json::array();
    std::size_t rank = 0;
    for (const auto& e : entries) {
      ordered_json r;
      r["rank"] = ++rank;
      r["reward"] = e.failed ? ordered_json(nullptr) : ordered_json(e.reward);
      r["accuracy"] = e.accuracy;
      r["cost"] = e.cost ? ordered_json(*e.cost) : ordered_json(nullptr);
      r["iteration"] = e.iteration;
      r["index"] = e.index;
      r["actions"] = action_key(e.action);
      r["pipeline"] = decode_action(space, e.action);
      if (e.failed) r["error"] = e.message;
      arr.push_back(std::move(r));
    }
    return arr;
  };
  ordered_json j;
  j["topk"] = rows(record.topk);
  if (!record.retrained.empty()) j["retrained"] = rows(record.retrained);
  return j;
}

namespace {

struct RunPaths {
  fs::path dir;
  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path pipelines() const { return dir / "pipelines.csv"; }
  fs::path summary() const { return dir / "summary.csv"; }
  fs::path topk() const { return dir / "topk.json"; }
  fs::path checkpoint() const { return dir / "checkpoint.json"; }
};

void save_artifacts(const RunPaths& paths, const Trainer& t) {
  write_pipelines_csv(paths.pipelines(), t.record());
  write_summary_csv(paths.summary(), t.record(), t.space());
  write_file(paths.topk(), topk_report(t.record(), t.space()).dump(2) + "\n");
  write_file(paths.checkpoint(), t.checkpoint().dump() + "\n");
}

void write_manifest(const RunPaths& paths, const ordered_json& manifest) {
  write_file(paths.manifest(), manifest.dump(2) + "\n");
}

int drive(Trainer& t, const RunConfig& config, const RunPaths& paths, ordered_json& manifest,
          const SearchOptions& options, std::ostream& log) {
  std::size_t done = 0;
  try {
    while (!t.finished()) {
      if (options.stop_after && done >= *options.stop_after) {
        save_artifacts(paths, t);
        manifest["status"] = "interrupted";
        manifest["iteration"] = t.iteration();
        write_manifest(paths, manifest);
        if (!options.quiet) log << "stopped after iteration " << t.iteration() << "; resume with the manifest\n";
        return kExitOk;
      }
      const IterationSummary& s = t.run_iteration();
      ++done;
      if (!options.quiet) {
        const double best = t.record().topk.empty() ? NAN : t.record().topk.front().reward;
        log << "iter " << s.iteration << "/" << config.hyper.max_iter << "  evaluated " << s.evaluated
            << "  failed " << s.failed << "  mean " << brief(s.batch_mean) << "  best " << brief(best) << '\n';
      }
      if (config.checkpoint_every > 0 && t.iteration() % config.checkpoint_every == 0 && !t.finished()) {
        save_artifacts(paths, t);
        manifest["iteration"] = t.iteration();
        write_manifest(paths, manifest);
      }
    }
    t.retrain_topk();
  } catch (const SearchAborted& e) {
    save_artifacts(paths, t);
    manifest["status"] = "aborted";
    manifest["iteration"] = t.iteration();
    manifest["error"] = e.what();
    manifest["finished_at"] = utc_now();
    write_manifest(paths, manifest);
    log << "error: search aborted: " << e.what() << '\n';
    return kExitAborted;
  } catch (const NumericError& e) {
    save_artifacts(paths, t);
    manifest["status"] = "aborted";
    manifest["iteration"] = t.iteration();
    manifest["error"] = e.what();
    manifest["finished_at"] = utc_now();
    write_manifest(paths, manifest);
    log << "error: search aborted: " << e.what() << '\n';
    return kExitAborted;
  }
  save_artifacts(paths, t);
  manifest["status"] = "finished";
  manifest["iteration"] = t.iteration();
  manifest["finished_at"] = utc_now();
  write_manifest(paths, manifest);
  if (!options.quiet && !t.record().topk.empty()) {
    const auto& best = t.record().topk.front();
    log << "best reward " << brief(best.reward) << " at iteration " << best.iteration << ": "
        << decode_action(t.space(), best.action).dump() << '\n';
  }
  return kExitOk;
}

TrainerOptions trainer_options(const RunConfig& c) {
  TrainerOptions o;
  o.variant = c.variant;
  o.hyper = c.hyper;
  o.objective = c.objective;
  return o;
}

}  // namespace

int run_search_command(const RunConfig& config, const SearchOptions& options, std::ostream& log) {
  std::unique_ptr<Trainer> trainer;
  try {
    const JointSpace space = config.joint_space();
    trainer = std::make_unique<Trainer>(space, make_oracle(config, space), trainer_options(config));
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  RunPaths paths{config.out_dir};
  std::error_code ec;
  fs::create_directories(paths.dir, ec);
  if (ec) {
    log << "error: cannot create output directory '" << paths.dir.string() << "': " << ec.message() << '\n';
    return kExitUsage;
  }
  ordered_json manifest;
  manifest["config_hash"] = config_hash(config);
  manifest["space_fingerprint"] = trainer->space().fingerprint();
  manifest["seed"] = config.hyper.seed;
  manifest["variant"] = to_string(config.variant);
  manifest["started_at"] = utc_now();
  manifest["finished_at"] = nullptr;
  manifest["status"] = "running";
  manifest["iteration"] = 0;
  manifest["artifacts"] = {{"pipelines", "pipelines.csv"},
                           {"summary", "summary.csv"},
                           {"topk", "topk.json"},
                           {"checkpoint", "checkpoint.json"}};
  manifest["config"] = run_config_to_json(config);
  write_manifest(paths, manifest);
  return drive(*trainer, config, paths, manifest, options, log);
}

int resume_command(const fs::path& manifest_path, const SearchOptions& options, std::ostream& log) {
  try {
    const json m = read_json(manifest_path, "manifest");
    ordered_json manifest = ordered_json::parse(m.dump());
    RunConfig config = parse_run_config(m.at("config"), manifest_path.parent_path());
    config.out_dir = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
    if (config_hash(config) != m.at("config_hash").get<std::string>())
      throw ConfigError("manifest config does not match its recorded hash");
    const JointSpace space = config.joint_space();
    if (space.fingerprint() != m.at("space_fingerprint").get<std::string>())
      throw ConfigError("space fingerprint mismatch: manifest has " + m.at("space_fingerprint").get<std::string>() +
                        ", config space is " + space.fingerprint());
    if (m.at("status").get<std::string>() == "finished") {
      if (!options.quiet) log << "run already finished; nothing to do\n";
      return kExitOk;
    }
    RunPaths paths{config.out_dir};
    Trainer trainer(space, make_oracle(config, space), trainer_options(config));
    if (fs::exists(paths.checkpoint())) trainer.restore(read_json(paths.checkpoint(), "checkpoint"));
    manifest["status"] = "running";
    manifest["resumed_at"] = utc_now();
    write_manifest(paths, manifest);
    if (!options.quiet) log << "resuming at iteration " << trainer.iteration() << '\n';
    return drive(trainer, config, paths, manifest, options, log);
  } catch (const json::exception& e) {
    log << "error: malformed manifest: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

std::optional<double> brute_force_optimum(const RunConfig& config, const JointSpace& space,
                                          const RewardOracle& oracle) {
  std::optional<double> best;
  auto consider = [&](const OracleResult& r) {
    if (r.failed) return;
    try {
      const double v = scalar_reward(r, config.objective);
      if (!best || v > *best) best = v;
    } catch (const ValidationError&) {
    }
  };
  if (const auto* tab = dynamic_cast<const TabularOracle*>(&oracle)) {
    for (const auto& [action, r] : tab->rows()) consider(r);
    return best;
  }
  if (dynamic_cast<const ExternalCommandOracle*>(&oracle)) return std::nullopt;
  const auto n = space.joint_action_count();
  if (!n || *n > SyntheticOracle::kEnumerationLimit) return std::nullopt;
  for (std::uint64_t k = 0; k < *n; ++k) consider(oracle.evaluate_high_fidelity(space.joint_unflatten(k)));
  return best;
}

CompareResult compare_variants(const RunConfig& base, const std::vector<Variant>& variants,
                               const std::vector<std::uint64_t>& seeds, double threshold_fraction) {
  if (variants.empty()) throw ConfigError("compare needs at least one variant");
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  CompareResult result;
  result.threshold_fraction = threshold_fraction;
  result.budget = base.hyper.max_iter * base.hyper.batch_size;
  const JointSpace space = base.joint_space();
  for (std::uint64_t seed : seeds) {
    RunConfig cfg = base;
    cfg.hyper.seed = seed;
    const auto oracle = make_oracle(cfg, space);
    const auto optimum = brute_force_optimum(cfg, space, *oracle);
    const double threshold = optimum ? threshold_fraction * *optimum : INFINITY;
    for (Variant v : variants) {
      cfg.variant = v;
      CompareRun run;
      run.variant = v;
      run.seed = seed;
      run.record = run_search(space, oracle, trainer_options(cfg));
      run.final_topk_mean = topk_mean(run.record);
      run.evals_to_threshold = evaluations_to_reach(run.record, threshold, result.budget);
      run.optimum = optimum ? *optimum : std::numeric_limits<double>::quiet_NaN();
      result.runs.push_back(std::move(run));
    }
  }
  const std::size_t nv = variants.size();
  for (std::size_t vi = 0; vi < nv; ++vi) {
    CompareSummaryRow row;
    row.variant = variants[vi];
    std::vector<double> finals, evals;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const CompareRun& r = result.runs[s * nv + vi];
      const CompareRun& ref = result.runs[s * nv];
      finals.push_back(r.final_topk_mean);
      evals.push_back(static_cast<double>(r.evals_to_threshold));
      if (r.evals_to_threshold <= result.budget) ++row.reached_threshold;
      if (vi > 0) {
        if (ref.final_topk_mean >= r.final_topk_mean) ++row.reference_topk_wins;
        if (ref.evals_to_threshold < r.evals_to_threshold) ++row.reference_evals_wins;
      }
    }
    row.seeds = seeds.size();
    double sum = 0.0;
    for (double f : finals) sum += f;
    row.mean_final_topk = sum / static_cast<double>(finals.size());
    row.median_final_topk = median(finals);
    row.median_evals_to_threshold = median(evals);
    result.summary.push_back(row);
  }
  return result;
}

void write_compare_curves(const fs::path& path, const CompareResult& result, std::size_t topk) {
  std::ostringstream out;
  out << "variant,seed,iteration,evaluations,best_so_far,topk_mean,batch_mean\n";
  for (const auto& run : result.runs) {
    const auto best = run.record.best_so_far();
    const auto topk_curve = run.record.topk_mean_curve(topk);
    std::size_t evaluations = 0;
    for (std::size_t k = 0; k < run.record.iterations.size(); ++k) {
      const auto& s = run.record.iterations[k];
      evaluations += s.evaluated + s.failed;
      const double b = evaluations ? best[evaluations - 1] : NAN;
      out << to_string(run.variant) << ',' << run.seed << ',' << s.iteration << ',' << evaluations << ','
          << num(b) << ',' << num(topk_curve[k]) << ',' << num(s.batch_mean) << '\n';
    }
  }
  write_file(path, out.str());
}

void write_compare_summary(const fs::path& path, const CompareResult& result) {
  std::ostringstream out;
  out << "variant,seeds,mean_final_topk,median_final_topk,median_evals_to_threshold,reached_threshold,"
         "reference,reference_topk_wins,reference_evals_wins\n";
  const std::string ref = result.summary.empty() ? "" : to_string(result.summary.front().variant);
  for (std::size_t k = 0; k < result.summary.size(); ++k) {
    const auto& r = result.summary[k];
    out << to_string(r.variant) << ',' << r.seeds << ',' << num(r.mean_final_topk) << ','
        << num(r.median_final_topk) << ',' << num(r.median_evals_to_threshold) << ',' << r.reached_threshold << ','
        << (k ? ref : "") << ',' << (k ? std::to_string(r.reference_topk_wins) : "") << ','
        << (k ? std::to_string(r.reference_evals_wins) : "") << '\n';
  }
  write_file(path, out.str());
}

CertifySummary certify_random_tables(const CertifyConfig& config) {
  if (!(config.lambda > 0.0)) throw ValidationError("certification needs lambda > 0");
  if (config.agents < 1 || config.actions < 1) throw ValidationError("certification needs agents, actions >= 1");
  const std::vector<std::size_t> shape(config.agents, config.actions);
  verify::CertifyOptions opt;
  opt.lambda = config.lambda;
  opt.iterations = config.iterations;
  opt.sweeps = config.sweeps;
  CertifySummary summary;
  for (std::size_t k = 0; k < config.seeds; ++k) {
    const std::uint64_t seed = config.first_seed + k;
    CertifySeedResult r{seed, verify::certify_monotone(verify::RewardTable::random(shape, seed), opt)};
    summary.monotone += r.report.monotone;
    summary.converged += r.report.converged;
    summary.near_optimal += r.report.normalized_gap <= config.near_optimal;
    summary.max_normalized_gap = std::max(summary.max_normalized_gap, r.report.normalized_gap);
    summary.results.push_back(std::move(r));
  }
  return summary;
}

void write_certify_csv(const fs::path& path, const CertifySummary& summary, bool failing_only) {
  std::ostringstream out;
  out << "seed,k,J_init,J_reg,KL,gap\n";
  for (const auto& r : summary.results) {
    if (failing_only && r.report.monotone) continue;
    for (const auto& row : r.report.rows)
      out << r.seed << ',' << row.k << ',' << num(row.j_init) << ',' << num(row.j_reg) << ','
          << num(row.kl_to_previous) << ',' << num(row.gap) << '\n';
  }
  write_file(path, out.str());
}

}  // namespace ma2ml
