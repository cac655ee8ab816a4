#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ma2ml/optimizer.hpp"
#include "ma2ml/rng.hpp"
#include "ma2ml/space.hpp"

namespace ma2ml {

/// One evaluated pipeline. The state token is constant and not stored.
struct Experience {
  JointAction action;
  double reward = 0.0;
  /// Iteration that produced this experience.
  std::uint64_t iteration = 0;

  bool operator==(const Experience&) const = default;
};

/// What a ReplayBuffer has handed out since the last reset_audit().
struct BufferAudit {
  std::uint64_t draws = 0;
  std::uint64_t min_iteration = std::numeric_limits<std::uint64_t>::max();
};

/// FIFO experience store. Capacity 0 means unlimited.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(Experience exp);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const Experience& operator[](std::size_t k) const { return entries_[k]; }
  const std::deque<Experience>& entries() const { return entries_; }

  /// `batch_size` uniform draws with replacement. Throws on an empty buffer.
  std::vector<Experience> sample(std::size_t batch_size, Rng& rng);
  /// Same, restricted to experiences with iteration >= min_iteration.
  std::vector<Experience> sample_since(std::size_t batch_size, std::uint64_t min_iteration, Rng& rng);

  const BufferAudit& audit() const { return audit_; }
  void reset_audit() { audit_ = {}; }

  nlohmann::json to_json() const;
  static ReplayBuffer from_json(const nlohmann::json& j, const JointSpace& space);

 private:
  std::vector<Experience> draw(std::size_t first, std::size_t batch_size, Rng& rng);

  std::size_t capacity_;
  std::deque<Experience> entries_;
  BufferAudit audit_;
};

/// Centralized action-value function Q(S, A) with a constant state.
class Critic {
 public:
  virtual ~Critic() = default;

  virtual std::string kind() const = 0;
  virtual double predict(const JointAction& action) const = 0;

  /// Q at `base` with agent `agent`'s choice replaced by each alternative.
  virtual std::vector<double> predict_alternatives(
      const JointAction& base, std::size_t agent,
      std::span<const std::vector<std::size_t>> alternatives) const;

  /// One update on `batch`; returns the mean squared error before the update.
  virtual double train(std::span<const Experience> batch, double lr) = 0;

  virtual nlohmann::json to_json() const = 0;
  virtual void load_json(const nlohmann::json& j) = 0;
};

/// Exact per-cell running means over an enumerable space (<= 10^6 joint actions).
class TabularQ final : public Critic {
 public:
  static constexpr std::uint64_t kMaxCells = 1'000'000;

  explicit TabularQ(const JointSpace& space);

  std::string kind() const override { return "tabular"; }

  /// Mean reward of a visited cell; throws UnknownCellError otherwise.
  double q_eval(const JointAction& action) const;
  std::optional<double> lookup(const JointAction& action) const;
  std::uint64_t count(const JointAction& action) const;

  /// Visited cells report their mean; unvisited cells fall back to the mean of
  /// every reward fitted so far (0 before any fit).
  double predict(const JointAction& action) const override;

  /// Running-mean update of every cell in the batch.
  void fit(std::span<const Experience> batch);
  double train(std::span<const Experience> batch, double lr) override;

  nlohmann::json to_json() const override;
  void load_json(const nlohmann::json& j) override;

 private:
  JointSpace space_;
  std::vector<double> mean_;
  std::vector<std::uint64_t> count_;
  double total_sum_ = 0.0;
  std::uint64_t total_count_ = 0;
};

/// One-hidden-layer tanh regressor over the one-hot encoding of the joint
/// action. Parameters are stored flat:
///   W1 [width x hidden] (row per one-hot slot), b1 [hidden], w2 [hidden], b2.
class NeuralQ final : public Critic {
 public:
  static constexpr std::size_t kDefaultHidden = 64;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  NeuralQ(const JointSpace& space, std::size_t hidden, Rng& init_rng,
          OptimizerKind optimizer = OptimizerKind::Sgd);
  static NeuralQ zeros(const JointSpace& space, std::size_t hidden = kDefaultHidden);

  std::string kind() const override { return "neural"; }
  std::size_t hidden() const { return hidden_; }
  std::size_t num_parameters() const { return params_.size(); }

  double predict(const JointAction& action) const override;
  std::vector<double> predict_alternatives(
      const JointAction& base, std::size_t agent,
      std::span<const std::vector<std::size_t>> alternatives) const override;

  /// Mean squared error over the batch.
  double loss(std::span<const Experience> batch) const;
  /// Exact gradient of loss() with respect to parameters(), by backpropagation.
  std::vector<double> gradient(std::span<const Experience> batch) const;

  std::span<const double> parameters() const { return params_; }
  void set_parameters(std::span<const double> values);

  /// One full-batch step on the mean squared error. Throws NumericError if the
  /// loss is not finite.
  double train(std::span<const Experience> batch, double lr) override;

  nlohmann::json to_json() const override;
  void load_json(const nlohmann::json& j) override;

 private:
  NeuralQ(const JointSpace& space, std::size_t hidden, OptimizerKind optimizer);

  std::size_t w1(std::size_t slot) const { return slot * hidden_; }
  std::size_t b1() const { return width_ * hidden_; }
  std::size_t w2() const { return b1() + hidden_; }
  std::size_t b2() const { return w2() + hidden_; }

  void accumulate_preactivation(const JointAction& action, std::vector<double>& pre) const;
  double output_from_preactivation(const std::vector<double>& pre) const;

  JointSpace space_;
  std::size_t width_;
  std::size_t hidden_;
  std::vector<double> params_;
  ParamOptimizer optimizer_;
};

enum class CriticKind { Neural, Tabular };

CriticKind parse_critic_kind(const std::string& name);
std::string to_string(CriticKind kind);

std::unique_ptr<Critic> make_critic(CriticKind kind, const JointSpace& space, std::size_t hidden,
                                    Rng& init_rng, OptimizerKind optimizer);

}  // namespace ma2ml
