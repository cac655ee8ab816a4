#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "ma2ml/rng.hpp"
#include "ma2ml/space.hpp"

namespace ma2ml {

/// [dimension][choice] table for one agent.
using AgentTable = std::vector<std::vector<double>>;
/// [agent][dimension][choice].
using LogitTable = std::vector<AgentTable>;

/// Raw logits of the factored categorical policies, one independent softmax
/// per (agent, dimension). Logits are never normalized; every consumer goes
/// through softmax, so adding a constant to a dimension changes nothing.
///
/// The same type carries the target policies.
struct PolicyParams {
  LogitTable logits;

  std::size_t num_agents() const { return logits.size(); }
  bool operator==(const PolicyParams&) const = default;
};

/// d log pi / d logits, shaped like PolicyParams.
struct LogitGradient {
  LogitTable values;
};

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

PolicyParams init_uniform(const JointSpace& space);

/// Throws ShapeError unless both tables have identical shape.
void check_same_shape(const PolicyParams& a, const PolicyParams& b);
void check_action_shape(const PolicyParams& params, const JointAction& action);

struct SampledAction {
  JointAction action;
  double log_prob = 0.0;
};

SampledAction sample(const PolicyParams& params, Rng& rng);
/// Draws one agent's action; one uniform per dimension, inverse CDF.
std::vector<std::size_t> sample_agent(const PolicyParams& params, std::size_t agent, Rng& rng);

double log_prob(const PolicyParams& params, const JointAction& action);
double agent_log_prob(const PolicyParams& params, std::size_t agent,
                      const std::vector<std::size_t>& choice);

/// Probability of every action of one agent, flattened with dimension 0 most
/// significant (same order as JointSpace::agent_flatten).
std::vector<double> agent_probabilities(const PolicyParams& params, std::size_t agent);

/// Shannon entropy per agent (sum over that agent's dimensions).
std::vector<double> entropy(const PolicyParams& params);

/// KL(params || target) per agent.
std::vector<double> kl(const PolicyParams& params, const PolicyParams& target);
double agent_kl(const PolicyParams& params, const PolicyParams& target, std::size_t agent);

LogitGradient grad_log_prob(const PolicyParams& params, const JointAction& action);
/// onehot(choice) - softmax(logits), per dimension of one agent.
AgentTable agent_grad_log_prob(const PolicyParams& params, std::size_t agent,
                               const std::vector<std::size_t>& choice);

/// (1 - tau) * target + tau * params, elementwise. tau in (0, 1].
PolicyParams soft_update(const PolicyParams& target, const PolicyParams& params, double tau);

/// Checkpoint document with the space fingerprint embedded.
nlohmann::json policy_to_json(const PolicyParams& params, const JointSpace& space);
/// Rejects documents written for a different space.
PolicyParams policy_from_json(const nlohmann::json& j, const JointSpace& space);

}  // namespace ma2ml
