#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ma2ml/config.hpp"
#include "ma2ml/trainer.hpp"
#include "ma2ml/verify.hpp"

namespace ma2ml {

/// Exit statuses of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitViolation = 1, kExitUsage = 2, kExitAborted = 3 };

// ---- run artifacts --------------------------------------------------------

/// Per-pipeline log: iteration,index,reward,accuracy,cost,actions,status
void write_pipelines_csv(const std::filesystem::path& path, const RunRecord& record);
/// Per-iteration log: batch mean/max, critic loss, entropy_<agent>, kl_<agent>.
void write_summary_csv(const std::filesystem::path& path, const RunRecord& record, const JointSpace& space);
/// Decoded top-k (and high-fidelity retrain results, when present).
nlohmann::ordered_json topk_report(const RunRecord& record, const JointSpace& space);

struct SearchOptions {
  /// Stop after this many iterations in this invocation, leaving a resumable checkpoint.
  std::optional<std::size_t> stop_after;
  bool quiet = false;
};

/// Runs (or resumes) the search described by `config` in config.out_dir:
/// manifest.json first, then pipelines.csv, summary.csv, topk.json and
/// checkpoint.json. Returns an ExitCode.
int run_search_command(const RunConfig& config, const SearchOptions& options, std::ostream& log);
int resume_command(const std::filesystem::path& manifest_path, const SearchOptions& options, std::ostream& log);

// ---- variant comparison ----------------------------------------------------

struct CompareRun {
  Variant variant = Variant::Ma2ml;
  std::uint64_t seed = 0;
  RunRecord record;
  double final_topk_mean = 0.0;
  /// Evaluations until best-so-far >= threshold (budget + 1 if never).
  std::size_t evals_to_threshold = 0;
  double optimum = 0.0;
};

struct CompareSummaryRow {
  Variant variant = Variant::Ma2ml;
  std::size_t seeds = 0;
  double mean_final_topk = 0.0;
  double median_final_topk = 0.0;
  double median_evals_to_threshold = 0.0;
  std::size_t reached_threshold = 0;
  /// Against the reference (first) variant; zero on the reference row.
  std::size_t reference_topk_wins = 0;   // reference final top-k >= this variant
  std::size_t reference_evals_wins = 0;  // reference strictly fewer evaluations
};

struct CompareResult {
  std::vector<CompareRun> runs;  // seed-major, variants in the requested order
  std::vector<CompareSummaryRow> summary;
  double threshold_fraction = 0.95;
  std::size_t budget = 0;
};

/// Best scalar reward over every joint action (high-fidelity evaluation), or
/// nullopt when the space has more than 2^21 joint actions.
std::optional<double> brute_force_optimum(const RunConfig& config, const JointSpace& space,
                                          const RewardOracle& oracle);

/// Runs every variant on every seed of `base` (seed and variant overridden).
CompareResult compare_variants(const RunConfig& base, const std::vector<Variant>& variants,
                               const std::vector<std::uint64_t>& seeds, double threshold_fraction = 0.95);

void write_compare_curves(const std::filesystem::path& path, const CompareResult& result, std::size_t topk);
void write_compare_summary(const std::filesystem::path& path, const CompareResult& result);

// ---- certification ---------------------------------------------------------

struct CertifyConfig {
  double lambda = 0.2;
  std::size_t agents = 3;
  std::size_t actions = 6;
  std::size_t seeds = 50;
  std::uint64_t first_seed = 0;
  std::size_t iterations = 200;
  std::size_t sweeps = 3;
  /// Normalized gap counted as near-optimal.
  double near_optimal = 0.01;
};

struct CertifySeedResult {
  std::uint64_t seed = 0;
  verify::CertificationReport report;
};

struct CertifySummary {
  std::vector<CertifySeedResult> results;
  std::size_t monotone = 0;
  std::size_t converged = 0;
  std::size_t near_optimal = 0;
  double max_normalized_gap = 0.0;
};

/// Random uniform reward tables, one per seed; throws ValidationError for lambda <= 0.
CertifySummary certify_random_tables(const CertifyConfig& config);
void write_certify_csv(const std::filesystem::path& path, const CertifySummary& summary, bool failing_only);

}  // namespace ma2ml
