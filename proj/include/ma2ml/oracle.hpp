#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ma2ml/space.hpp"

namespace ma2ml {

/// Outcome of evaluating one pipeline. `accuracy` stands in for top-1
/// validation accuracy and `cost` for FLOPs.
struct OracleResult {
  double accuracy = 0.0;
  std::optional<double> cost;
  bool failed = false;
  std::string message;

  static OracleResult failure(std::string why) {
    OracleResult r;
    r.failed = true;
    r.message = std::move(why);
    return r;
  }
  bool operator==(const OracleResult&) const = default;
};

/// Accuracy/cost trade-off: reward = accuracy * (cost / constraint)^w.
struct MultiObjectiveSpec {
  double w = -0.07;
  double constraint = 600e6;

  void validate() const;
};

double multi_objective_reward(const OracleResult& result, const MultiObjectiveSpec& spec);

/// Scalar reward of a successful result: accuracy, or the multi-objective
/// transform when `objective` is set. Throws ValidationError for failed
/// results or a missing cost.
double scalar_reward(const OracleResult& result, const std::optional<MultiObjectiveSpec>& objective);

/// Maps a joint action to a reward. Implementations are immutable after
/// construction and safe to call from several threads.
class RewardOracle {
 public:
  virtual ~RewardOracle() = default;
  virtual OracleResult evaluate(const JointAction& action) const = 0;
  /// True when evaluate() is a cheap low-fidelity proxy of evaluate_high_fidelity().
  virtual bool has_high_fidelity() const { return false; }
  virtual OracleResult evaluate_high_fidelity(const JointAction& action) const { return evaluate(action); }
  virtual std::string describe() const = 0;
  /// Upper bound on concurrent evaluate() calls worth issuing (0 = no limit).
  virtual std::size_t max_concurrency() const { return 0; }
};

/// Seeded synthetic landscape:
///   raw(A) = (1 - c) * sum_i f_i(A_i) + c * sum_{i<j} g_ij(A_i mod K, A_j mod K)
/// mapped affinely from its enumerated (or sampled) range onto [0.05, 0.95].
/// Costs are a seeded log-uniform table on [300M, 1200M]. With noise > 0,
/// evaluate() adds deterministic Gaussian noise and evaluate_high_fidelity()
/// returns the clean value.
class SyntheticOracle final : public RewardOracle {
 public:
  static constexpr std::uint64_t kEnumerationLimit = std::uint64_t{1} << 21;
  static constexpr std::size_t kNormalizationSamples = 100'000;

  SyntheticOracle(JointSpace space, std::uint64_t seed, double coupling, std::size_t buckets = 8,
                  double noise = 0.0);

  OracleResult evaluate(const JointAction& action) const override;
  OracleResult evaluate_high_fidelity(const JointAction& action) const override;
  bool has_high_fidelity() const override { return noise_ > 0.0; }
  std::string describe() const override;

  /// Unnormalized landscape value.
  double raw(const JointAction& action) const;
  double accuracy(const JointAction& action) const;
  double cost(const JointAction& action) const;

  double coupling() const { return coupling_; }
  /// True when the normalization range came from full enumeration or exact bounds.
  bool exact_range() const { return exact_range_; }
  double raw_min() const { return raw_min_; }
  double raw_max() const { return raw_max_; }

 private:
  std::uint64_t agent_code(std::size_t agent, const std::vector<std::size_t>& choice) const;
  std::uint64_t bucket(std::size_t agent, const std::vector<std::size_t>& choice) const;
  double separable_term(std::size_t agent, std::uint64_t code) const;

  JointSpace space_;
  std::uint64_t seed_;
  double coupling_;
  std::size_t buckets_;
  double noise_;
  double raw_min_ = 0.0, raw_max_ = 1.0;
  bool exact_range_ = false;
};

/// Reward depends only on each agent's own choice (coupling 0).
std::unique_ptr<SyntheticOracle> separable_oracle(const JointSpace& space, std::uint64_t seed);
std::unique_ptr<SyntheticOracle> coupled_oracle(const JointSpace& space, std::uint64_t seed,
                                                double coupling, std::size_t buckets = 8);

/// Exact lookup benchmark loaded from CSV with header
/// `a_<agent>_<dim>,...,accuracy[,cost]`. Unlisted actions evaluate as failed.
class TabularOracle final : public RewardOracle {
 public:
  static TabularOracle load(const std::filesystem::path& path, const JointSpace& space);
  static TabularOracle parse(const std::string& csv_text, const JointSpace& space);

  OracleResult evaluate(const JointAction& action) const override;
  std::string describe() const override;

  std::size_t size() const { return rows_.size(); }
  const std::map<JointAction, OracleResult>& rows() const { return rows_; }

 private:
  explicit TabularOracle(JointSpace space) : space_(std::move(space)) {}

  JointSpace space_;
  std::string source_;
  std::map<JointAction, OracleResult> rows_;
};

/// CSV header for a tabular benchmark of `space`.
std::string tabular_header(const JointSpace& space, bool with_cost);

/// Writes every joint action of an enumerable space, evaluated by `oracle`.
void write_tabular_csv(const std::filesystem::path& path, const JointSpace& space,
                       const RewardOracle& oracle);

/// Runs `command` through /bin/sh once per evaluation. The decoded pipeline
/// is written to the child's stdin as one JSON line; the child must print a
/// JSON object {"accuracy": real, "cost": real?} on stdout and exit 0.
/// Anything else (spawn failure, nonzero exit, timeout, bad output) yields a
/// failed result whose message carries the captured stderr.
class ExternalCommandOracle final : public RewardOracle {
 public:
  ExternalCommandOracle(JointSpace space, std::string command, double timeout_seconds = 3600.0,
                        std::size_t max_concurrent = 24);

  OracleResult evaluate(const JointAction& action) const override;
  std::string describe() const override;
  std::size_t max_concurrency() const override { return max_concurrent_; }

 private:
  OracleResult run_child(const std::string& request) const;

  JointSpace space_;
  std::string command_;
  double timeout_seconds_;
  std::size_t max_concurrent_;
  mutable std::mutex slots_mutex_;
  mutable std::condition_variable slots_cv_;
  mutable std::size_t active_ = 0;
};

/// Parses one response document. Returns a failed result on protocol errors.
OracleResult parse_oracle_response(const std::string& text);

}  // namespace ma2ml
