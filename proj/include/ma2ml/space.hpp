#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ma2ml {

/// One categorical decision, e.g. "operation type" or "learning rate".
struct DimensionSpec {
  std::string name;
  std::size_t cardinality = 0;
  /// Empty, or exactly `cardinality` unique values.
  std::vector<std::string> labels;

  bool has_labels() const { return !labels.empty(); }
  bool operator==(const DimensionSpec&) const = default;
};

/// The action space of one agent (one pipeline module).
struct AgentSpace {
  std::string name;
  std::vector<DimensionSpec> dimensions;

  bool operator==(const AgentSpace&) const = default;
};

/// Per-agent index vectors, one entry per dimension. Ordered lexicographically.
struct JointAction {
  std::vector<std::vector<std::size_t>> choices;

  auto operator<=>(const JointAction&) const = default;
  bool operator==(const JointAction&) const = default;
};

/// Product action space of all agents. Immutable once constructed; the
/// constructor enforces every structural invariant.
class JointSpace {
 public:
  explicit JointSpace(std::vector<AgentSpace> agents);

  const std::vector<AgentSpace>& agents() const { return agents_; }
  const AgentSpace& agent(std::size_t i) const { return agents_.at(i); }
  std::size_t num_agents() const { return agents_.size(); }
  std::size_t num_dimensions() const { return num_dimensions_; }

  /// Length of the concatenated one-hot encoding (sum of cardinalities).
  std::size_t onehot_width() const { return onehot_width_; }
  /// Position of the first one-hot slot of (agent, dim).
  std::size_t onehot_offset(std::size_t agent, std::size_t dim) const {
    return offsets_[agent][dim];
  }

  double agent_log10_cardinality(std::size_t agent) const;

  /// Number of distinct actions of one agent, or nullopt past 2^62.
  std::optional<std::uint64_t> agent_action_count(std::size_t agent) const;
  /// Number of joint actions, or nullopt past 2^62.
  std::optional<std::uint64_t> joint_action_count() const;

  /// Agent-local action from a flat index (dimension 0 most significant).
  std::vector<std::size_t> agent_unflatten(std::size_t agent, std::uint64_t flat) const;
  std::uint64_t agent_flatten(std::size_t agent, const std::vector<std::size_t>& choice) const;

  /// Joint action from a flat index (agent 0 most significant).
  JointAction joint_unflatten(std::uint64_t flat) const;
  std::uint64_t joint_flatten(const JointAction& action) const;

  /// Stable 16-hex-digit hash of the canonical serialization.
  std::string fingerprint() const;

  bool operator==(const JointSpace& other) const { return agents_ == other.agents_; }

 private:
  std::vector<AgentSpace> agents_;
  std::vector<std::vector<std::size_t>> offsets_;
  std::size_t num_dimensions_ = 0;
  std::size_t onehot_width_ = 0;
};

JointSpace parse_space(std::string_view config_text);
JointSpace parse_space_json(const nlohmann::json& config);
JointSpace load_space(const std::filesystem::path& path);

nlohmann::ordered_json space_to_json(const JointSpace& space);
std::string serialize_space(const JointSpace& space);

/// Sum over all dimensions of log10(cardinality).
double log10_cardinality(const JointSpace& space);

/// Throws ShapeError on a shape mismatch and ValidationError on an index out of range.
void validate_action(const JointSpace& space, const JointAction& action);

std::vector<double> encode_onehot(const JointSpace& space, const JointAction& action);

/// {agent: {dimension: label-or-index}} in space order.
nlohmann::ordered_json decode_action(const JointSpace& space, const JointAction& action);

/// Inverse of decode_action: resolves labels (or integer indices) back to indices.
JointAction lookup_action(const JointSpace& space, const nlohmann::json& decoded);

/// Semicolon-joined indices across all agents and dimensions.
std::string action_key(const JointAction& action);
JointAction parse_action_key(const JointSpace& space, std::string_view key);

nlohmann::json action_to_json(const JointAction& action);
JointAction action_from_json(const nlohmann::json& j);

}  // namespace ma2ml
