#pragma once

// Exact tabular divergence policy iteration on enumerable spaces.
//
// Each agent holds an explicit distribution over its flattened action set and
// the joint policy is their product. One iteration anchors the target at the
// current policy and then runs cyclic coordinate ascent on
//   J_reg(pi, rho) = E_pi[R] - lambda * KL(pi || rho),
// replacing one agent at a time by its exact best response
//   pi_i(a) ~ rho_i(a) * exp(qbar_i(a) / lambda).
// Coordinate ascent starts at rho and never lowers J_reg, which is all the
// monotonic-improvement argument needs:
//   J_init(pi') >= J_reg(pi', pi) >= J_reg(pi, pi) = J_init(pi).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ma2ml/oracle.hpp"
#include "ma2ml/policy.hpp"
#include "ma2ml/space.hpp"

namespace ma2ml::verify {

/// Dense reward over all joint actions, agent 0 most significant.
class RewardTable {
 public:
  static constexpr std::uint64_t kMaxEntries = 1'000'000;

  RewardTable(std::vector<std::size_t> shape, std::vector<double> values);

  /// Entries uniform in [0, 1), seeded.
  static RewardTable random(std::vector<std::size_t> shape, std::uint64_t seed);
  /// Tabulates `oracle` (accuracy of each joint action) over an enumerable space;
  /// each agent's actions are flattened. Throws if any evaluation fails.
  static RewardTable from_oracle(const JointSpace& space, const RewardOracle& oracle);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t num_agents() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }

  double at(const std::vector<std::size_t>& action) const;
  std::size_t flatten(const std::vector<std::size_t>& action) const;
  std::vector<std::size_t> unflatten(std::size_t flat) const;

  double min() const;
  double max() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// Product policy: one probability vector per agent.
struct TabularJointPolicy {
  std::vector<std::vector<double>> agents;

  static TabularJointPolicy uniform(const std::vector<std::size_t>& shape);
  /// Flattened per-agent distributions of a factored logit policy.
  static TabularJointPolicy from_params(const PolicyParams& params);
  void validate(const std::vector<std::size_t>& shape) const;
};

/// E_pi[R], exact.
double j_init(const TabularJointPolicy& policy, const RewardTable& table);
/// Sum over agents of KL(policy_i || target_i).
double product_kl(const TabularJointPolicy& policy, const TabularJointPolicy& target);
/// J_init(policy) - lambda * KL(policy || target).
double j_reg(const TabularJointPolicy& policy, const TabularJointPolicy& target, const RewardTable& table,
             double lambda);

/// qbar_i(a) = E_{A_-i ~ pi_-i}[R(a, A_-i)].
std::vector<double> marginal_q(const TabularJointPolicy& policy, const RewardTable& table, std::size_t agent);

/// Unique maximizer of E_pi[qbar] - lambda * KL(pi || target): target * exp(qbar / lambda),
/// normalized. Requires lambda > 0.
std::vector<double> tilt_best_response(const std::vector<double>& target, const std::vector<double>& qbar,
                                       double lambda);
/// lambda = 0 limit: uniform over the maximizers of qbar.
std::vector<double> argmax_response(const std::vector<double>& qbar);

TabularJointPolicy divergence_iteration_step(const TabularJointPolicy& policy, const RewardTable& table,
                                             double lambda, std::size_t sweeps = 3);

struct BestAction {
  std::vector<std::size_t> action;
  double value = 0.0;
};

/// Exhaustive argmax; ties go to the lexicographically first action.
BestAction brute_force_best(const RewardTable& table);

struct CertificationRow {
  std::size_t k = 0;
  double j_init = 0.0;
  double j_reg = 0.0;
  double kl_to_previous = 0.0;
  double gap = 0.0;
};

struct CertificationReport {
  std::vector<CertificationRow> rows;  // k = 0 is the uniform start
  bool monotone = true;
  bool reg_monotone = true;
  bool converged = false;
  std::optional<std::size_t> violation_k;
  std::string violation;
  double optimum = 0.0;
  double final_j = 0.0;
  double final_gap = 0.0;
  /// final_gap / (max - min) of the table.
  double normalized_gap = 0.0;
  TabularJointPolicy final_policy;
};

struct CertifyOptions {
  double lambda = 0.2;
  std::size_t iterations = 200;
  std::size_t sweeps = 3;
  double monotone_slack = 1e-12;
  double convergence_tol = 1e-10;
};

/// Runs divergence iteration from the uniform policy and checks that J_init
/// never decreases (beyond the slack) and that the last step moved it less
/// than the convergence tolerance.
CertificationReport certify_monotone(const RewardTable& table, const CertifyOptions& options);

}  // namespace ma2ml::verify
