#include "ma2ml/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ma2ml/error.hpp"

namespace ma2ml {

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - m);
    z += p[k];
  }
  for (double& x : p) x /= z;
  return p;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - m);
  const double lz = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lz;
  return out;
}

PolicyParams init_uniform(const JointSpace& space) {
  PolicyParams p;
  for (const auto& agent : space.agents()) {
    AgentTable t;
    for (const auto& dim : agent.dimensions) t.emplace_back(dim.cardinality, 0.0);
    p.logits.push_back(std::move(t));
  }
  return p;
}

void check_same_shape(const PolicyParams& a, const PolicyParams& b) {
  if (a.logits.size() != b.logits.size()) throw ShapeError("policies differ in agent count");
  for (std::size_t i = 0; i < a.logits.size(); ++i) {
    if (a.logits[i].size() != b.logits[i].size())
      throw ShapeError("policies differ in dimension count for agent " + std::to_string(i));
    for (std::size_t d = 0; d < a.logits[i].size(); ++d)
      if (a.logits[i][d].size() != b.logits[i][d].size())
        throw ShapeError("policies differ in cardinality at agent " + std::to_string(i) +
                         ", dimension " + std::to_string(d));
  }
}

void check_action_shape(const PolicyParams& params, const JointAction& action) {
  if (action.choices.size() != params.logits.size())
    throw ShapeError("action agent count does not match policy");
  for (std::size_t i = 0; i < params.logits.size(); ++i) {
    if (action.choices[i].size() != params.logits[i].size())
      throw ShapeError("action dimension count does not match policy for agent " + std::to_string(i));
    for (std::size_t d = 0; d < params.logits[i].size(); ++d)
      if (action.choices[i][d] >= params.logits[i][d].size())
        throw ShapeError("action index out of range for agent " + std::to_string(i));
  }
}

std::vector<std::size_t> sample_agent(const PolicyParams& params, std::size_t agent, Rng& rng) {
  const AgentTable& table = params.logits.at(agent);
  std::vector<std::size_t> choice(table.size());
  for (std::size_t d = 0; d < table.size(); ++d) {
    const auto p = softmax(table[d]);
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t k = 0;
    for (; k + 1 < p.size(); ++k) {
      cum += p[k];
      if (u < cum) break;
    }
    choice[d] = k;
  }
  return choice;
}

SampledAction sample(const PolicyParams& params, Rng& rng) {
  SampledAction out;
  out.action.choices.reserve(params.num_agents());
  for (std::size_t i = 0; i < params.num_agents(); ++i)
    out.action.choices.push_back(sample_agent(params, i, rng));
  out.log_prob = log_prob(params, out.action);
  return out;
}

double agent_log_prob(const PolicyParams& params, std::size_t agent,
                      const std::vector<std::size_t>& choice) {
  const AgentTable& table = params.logits.at(agent);
  if (choice.size() != table.size()) throw ShapeError("agent action has wrong dimension count");
  double lp = 0.0;
  for (std::size_t d = 0; d < table.size(); ++d) {
    if (choice[d] >= table[d].size()) throw ShapeError("agent action index out of range");
    lp += log_softmax(table[d])[choice[d]];
  }
  return lp;
}

double log_prob(const PolicyParams& params, const JointAction& action) {
  check_action_shape(params, action);
  double lp = 0.0;
  for (std::size_t i = 0; i < params.num_agents(); ++i) lp += agent_log_prob(params, i, action.choices[i]);
  return lp;
}

std::vector<double> agent_probabilities(const PolicyParams& params, std::size_t agent) {
  std::vector<double> out{1.0};
  for (const auto& logits : params.logits.at(agent)) {
    const auto p = softmax(logits);
    std::vector<double> next;
    next.reserve(out.size() * p.size());
    for (double prefix : out)
      for (double pk : p) next.push_back(prefix * pk);
    out = std::move(next);
  }
  return out;
}

std::vector<double> entropy(const PolicyParams& params) {
  std::vector<double> out;
  for (const auto& table : params.logits) {
    double h = 0.0;
    for (const auto& logits : table) {
      const auto lp = log_softmax(logits);
      for (double l : lp) h -= std::exp(l) * l;
    }
    out.push_back(std::max(h, 0.0));
  }
  return out;
}

double agent_kl(const PolicyParams& params, const PolicyParams& target, std::size_t agent) {
  const AgentTable& pt = params.logits.at(agent);
  const AgentTable& qt = target.logits.at(agent);
  double total = 0.0;
  for (std::size_t d = 0; d < pt.size(); ++d) {
    const auto lp = log_softmax(pt[d]);
    const auto lq = log_softmax(qt[d]);
    for (std::size_t k = 0; k < lp.size(); ++k) total += std::exp(lp[k]) * (lp[k] - lq[k]);
  }
  return std::max(total, 0.0);
}

std::vector<double> kl(const PolicyParams& params, const PolicyParams& target) {
  check_same_shape(params, target);
  std::vector<double> out;
  for (std::size_t i = 0; i < params.num_agents(); ++i) out.push_back(agent_kl(params, target, i));
  return out;
}

AgentTable agent_grad_log_prob(const PolicyParams& params, std::size_t agent,
                               const std::vector<std::size_t>& choice) {
  const AgentTable& table = params.logits.at(agent);
  if (choice.size() != table.size()) throw ShapeError("agent action has wrong dimension count");
  AgentTable g(table.size());
  for (std::size_t d = 0; d < table.size(); ++d) {
    if (choice[d] >= table[d].size()) throw ShapeError("agent action index out of range");
    g[d] = softmax(table[d]);
    for (double& x : g[d]) x = -x;
    g[d][choice[d]] += 1.0;
  }
  return g;
}

LogitGradient grad_log_prob(const PolicyParams& params, const JointAction& action) {
  check_action_shape(params, action);
  LogitGradient g;
  for (std::size_t i = 0; i < params.num_agents(); ++i)
    g.values.push_back(agent_grad_log_prob(params, i, action.choices[i]));
  return g;
}

PolicyParams soft_update(const PolicyParams& target, const PolicyParams& params, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("tau must lie in (0, 1]");
  check_same_shape(target, params);
  PolicyParams out = target;
  for (std::size_t i = 0; i < out.logits.size(); ++i)
    for (std::size_t d = 0; d < out.logits[i].size(); ++d)
      for (std::size_t k = 0; k < out.logits[i][d].size(); ++k)
        out.logits[i][d][k] = (1.0 - tau) * target.logits[i][d][k] + tau * params.logits[i][d][k];
  return out;
}

nlohmann::json policy_to_json(const PolicyParams& params, const JointSpace& space) {
  nlohmann::json j;
  j["space_fingerprint"] = space.fingerprint();
  j["logits"] = params.logits;
  return j;
}

PolicyParams policy_from_json(const nlohmann::json& j, const JointSpace& space) {
  if (!j.contains("space_fingerprint") || j["space_fingerprint"] != space.fingerprint())
    throw ValidationError("policy checkpoint was written for a different space");
  PolicyParams p{j.at("logits").get<LogitTable>()};
  check_same_shape(p, init_uniform(space));
  for (const auto& t : p.logits)
    for (const auto& v : t)
      for (double x : v)
        if (!std::isfinite(x)) throw ValidationError("policy checkpoint contains non-finite logits");
  return p;
}

}  // namespace ma2ml
