#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "ma2ml/oracle.hpp"
#include "ma2ml/space.hpp"
#include "ma2ml/trainer.hpp"

namespace ma2ml {

struct OracleConfig {
  /// separable | coupled | tabular | exec
  std::string kind = "coupled";
  /// Landscape seed; derived from the run seed when absent.
  std::optional<std::uint64_t> seed;
  double coupling = 0.7;
  std::size_t buckets = 8;
  double noise = 0.0;
  /// Benchmark CSV for `tabular`, absolute or relative to the config file.
  std::string path;
  /// Shell command for `exec`.
  std::string command;
  double timeout_seconds = 3600.0;
  std::size_t max_concurrent = 24;
};

/// A fully resolved search configuration. The space is stored inline even
/// when the file referenced it, so a resolved config is self-contained.
struct RunConfig {
  nlohmann::ordered_json space;
  OracleConfig oracle;
  Variant variant = Variant::Ma2ml;
  Hyperparams hyper;
  std::optional<MultiObjectiveSpec> objective;
  std::filesystem::path out_dir = "ma2ml-run";
  /// Write a checkpoint every N iterations (0 = only at the end).
  std::size_t checkpoint_every = 0;

  JointSpace joint_space() const;
};

/// Throws ConfigError for unreadable files, malformed JSON, unknown keys and
/// invalid values; the message names the offending field.
RunConfig load_run_config(const std::filesystem::path& path);
/// `base_dir` resolves space_ref and oracle paths.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

nlohmann::ordered_json run_config_to_json(const RunConfig& config);
/// Hash of the canonical resolved config, excluding the output directory.
std::string config_hash(const RunConfig& config);

/// Applies a command-line oracle spec: separable | coupled | tabular:PATH | exec:CMD.
void apply_oracle_spec(RunConfig& config, const std::string& spec);

std::uint64_t oracle_seed(const RunConfig& config);
std::shared_ptr<const RewardOracle> make_oracle(const RunConfig& config, const JointSpace& space);

}  // namespace ma2ml
