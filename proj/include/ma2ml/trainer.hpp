#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ma2ml/critic.hpp"
#include "ma2ml/optimizer.hpp"
#include "ma2ml/oracle.hpp"
#include "ma2ml/policy.hpp"
#include "ma2ml/rng.hpp"
#include "ma2ml/space.hpp"

namespace ma2ml {

enum class Variant { Ma2ml, Lite, OnPolicy };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

/// How the counterfactual expectation over one agent's action is computed.
struct BaselineMode {
  static constexpr std::size_t kExactLimit = 4096;

  bool exact = false;
  /// Monte Carlo draws when not exact.
  std::size_t samples = 1;

  static BaselineMode exact_mode() { return {true, 0}; }
  static BaselineMode monte_carlo(std::size_t m) { return {false, m}; }

  /// "exact" or a positive integer.
  static BaselineMode parse(const nlohmann::json& j);
  nlohmann::json to_json() const;
  bool operator==(const BaselineMode&) const = default;
};

struct Hyperparams {
  double lambda = 0.2;
  double policy_lr = 0.0004;
  double critic_lr = 0.005;
  double tau = 0.004;
  std::size_t batch_size = 24;
  std::size_t minibatch_size = 64;
  BaselineMode baseline;
  std::size_t max_iter = 83;
  std::size_t topk = 20;
  std::uint64_t seed = 0;

  /// Critic/policy/target update rounds after each evaluated batch.
  std::size_t updates_per_iteration = 1;
  OptimizerKind policy_optimizer = OptimizerKind::Adam;
  OptimizerKind critic_optimizer = OptimizerKind::Adam;
  CriticKind critic = CriticKind::Neural;
  std::size_t critic_hidden = NeuralQ::kDefaultHidden;
  double ema_decay = 0.95;
  std::size_t buffer_capacity = 0;
  /// Concurrent oracle evaluations within a batch.
  std::size_t parallelism = 1;

  /// Throws ValidationError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static Hyperparams from_json(const nlohmann::json& j);
};

/// Shared scalar baseline of the Lite variant: b <- decay * b + (1 - decay) * r.
struct EmaBaseline {
  double value = 0.0;
  double decay = 0.95;
  bool initialized = false;

  void observe(double reward);
  bool operator==(const EmaBaseline&) const = default;
};

/// Counterfactual baseline of agent `agent` at `action`:
///   E_{a ~ pi_i}[Q(a, A_-i) - lambda * log(pi_i(a) / rho_i(a))],
/// exactly by enumeration or as a mean over `mode.samples` draws from pi_i.
double counterfactual_baseline(const Critic& q, const JointSpace& space, const PolicyParams& policy,
                               const PolicyParams& target, const JointAction& action, std::size_t agent,
                               double lambda, const BaselineMode& mode, Rng& rng);

/// log pi_i(A_i) - log rho_i(A_i).
double agent_log_ratio(const PolicyParams& policy, const PolicyParams& target, std::size_t agent,
                       const std::vector<std::size_t>& choice);

/// Q(A) - lambda * log_ratio_i(A_i) - counterfactual_baseline.
double advantage(const Critic& q, const JointSpace& space, const PolicyParams& policy, const PolicyParams& target,
                 const JointAction& action, std::size_t agent, double lambda, const BaselineMode& mode, Rng& rng);

/// Mean over the minibatch of grad log pi_i(A_i) * advantage_i, for every
/// agent, all computed from the same snapshot. Throws NumericError on a
/// non-finite entry.
LogitGradient policy_gradient(const Critic& q, const JointSpace& space, const PolicyParams& policy,
                              const PolicyParams& target, std::span<const Experience> minibatch, double lambda,
                              const BaselineMode& mode, Rng& rng);

/// Mean over the batch of grad log pi_i(A_i) * (R - b).
LogitGradient lite_gradient(const PolicyParams& policy, std::span<const Experience> batch, double b);

/// One ascent step of size `lr` along `grad`. With optimizers given (one per
/// agent), their step rule is used; otherwise plain gradient ascent.
PolicyParams ascend(const PolicyParams& policy, const LogitGradient& grad, double lr,
                    std::vector<ParamOptimizer>* optimizers = nullptr);

/// Plain-ascent policy update from the current minibatch.
PolicyParams policy_update(const Critic& q, const JointSpace& space, const PolicyParams& policy,
                           const PolicyParams& target, std::span<const Experience> minibatch, double lambda,
                           double lr, const BaselineMode& mode, Rng& rng);

/// REINFORCE step with the shared baseline, then the EMA absorbs the batch
/// mean. An uninitialized EMA is first set to the batch mean.
PolicyParams lite_update(const PolicyParams& policy, std::span<const Experience> batch, EmaBaseline& ema,
                         double lr, std::vector<ParamOptimizer>* optimizers = nullptr);

struct PipelineEntry {
  std::uint64_t iteration = 0;
  std::size_t index = 0;
  JointAction action;
  double reward = 0.0;
  double accuracy = 0.0;
  std::optional<double> cost;
  bool failed = false;
  std::string message;

  bool operator==(const PipelineEntry&) const = default;
};

/// Reward descending, then earlier iteration, then lexicographic action.
bool topk_before(const PipelineEntry& a, const PipelineEntry& b);

struct IterationSummary {
  std::uint64_t iteration = 0;
  std::size_t evaluated = 0;
  std::size_t failed = 0;
  double batch_mean = std::numeric_limits<double>::quiet_NaN();
  double batch_max = std::numeric_limits<double>::quiet_NaN();
  /// Mean pre-step critic loss over this iteration's updates (NaN when none).
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> entropy;
  std::vector<double> kl;

  bool operator==(const IterationSummary&) const;
};

struct RunRecord {
  std::vector<PipelineEntry> pipelines;
  std::vector<IterationSummary> iterations;
  std::vector<PipelineEntry> topk;
  /// Top-k re-evaluated at high fidelity, when the oracle offers it.
  std::vector<PipelineEntry> retrained;

  /// Best reward among the first n evaluated (successful) pipelines.
  std::vector<double> best_so_far() const;
  /// Mean reward of the top-k after each iteration.
  std::vector<double> topk_mean_curve(std::size_t k) const;
  bool operator==(const RunRecord&) const = default;
};

nlohmann::json record_to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

struct TrainerOptions {
  Variant variant = Variant::Ma2ml;
  Hyperparams hyper;
  std::optional<MultiObjectiveSpec> objective;
  /// Consecutive iterations with more than half the batch failing before abort.
  std::size_t failure_patience = 3;
};

/// One search run. Owns policies, targets, critic, buffer, EMA and the RNG
/// substreams; only oracle evaluation runs concurrently.
class Trainer {
 public:
  Trainer(JointSpace space, std::shared_ptr<const RewardOracle> oracle, TrainerOptions options);

  /// Samples, evaluates and learns from one batch. Throws SearchAborted after
  /// persistent oracle failure.
  const IterationSummary& run_iteration();
  /// Runs until max_iter (or `limit` more iterations).
  void run(std::optional<std::size_t> limit = std::nullopt);
  bool finished() const { return iteration_ >= options_.hyper.max_iter; }
  /// Re-evaluates the top-k at high fidelity when available.
  void retrain_topk();

  std::uint64_t iteration() const { return iteration_; }
  const RunRecord& record() const { return record_; }
  const PolicyParams& policy() const { return policy_; }
  const PolicyParams& target() const { return target_; }
  const Critic* critic() const { return critic_.get(); }
  /// The audit covers the minibatch draws of the latest iteration.
  const ReplayBuffer& buffer() const { return buffer_; }
  const EmaBaseline& ema() const { return ema_; }
  const JointSpace& space() const { return space_; }
  const TrainerOptions& options() const { return options_; }
  /// Most likely joint action under the current policy.
  JointAction greedy_action() const;

  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& checkpoint);

 private:
  std::vector<OracleResult> evaluate_batch(const std::vector<JointAction>& actions) const;
  double update_actor_critic(std::uint64_t iteration);
  void update_lite(std::span<const Experience> fresh);
  void refresh_topk(std::span<const PipelineEntry> fresh);

  JointSpace space_;
  std::shared_ptr<const RewardOracle> oracle_;
  TrainerOptions options_;

  PolicyParams policy_;
  PolicyParams target_;
  std::unique_ptr<Critic> critic_;
  ReplayBuffer buffer_;
  EmaBaseline ema_;
  std::vector<ParamOptimizer> policy_opt_;

  Rng sampling_rng_;
  Rng buffer_rng_;
  Rng baseline_rng_;

  std::uint64_t iteration_ = 0;
  std::size_t failure_streak_ = 0;
  RunRecord record_;
};

/// Builds a trainer, runs it to max_iter and retrains the top-k.
RunRecord run_search(const JointSpace& space, std::shared_ptr<const RewardOracle> oracle,
                     const TrainerOptions& options);

/// First evaluation count at which the best-so-far reward reaches `threshold`,
/// or budget + 1 when it never does within `budget`.
std::size_t evaluations_to_reach(const RunRecord& record, double threshold, std::size_t budget);

}  // namespace ma2ml
