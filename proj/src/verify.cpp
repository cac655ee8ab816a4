#include "ma2ml/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ma2ml/error.hpp"
#include "ma2ml/rng.hpp"

namespace ma2ml::verify {

RewardTable::RewardTable(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty()) throw ValidationError("reward table needs at least one agent");
  std::uint64_t n = 1;
  for (std::size_t s : shape_) {
    if (s == 0) throw ValidationError("reward table extents must be positive");
    if (n > kMaxEntries / s) throw ValidationError("reward table exceeds 10^6 entries");
    n *= s;
  }
  if (values_.size() != n) throw ShapeError("reward table value count does not match its shape");
  for (double v : values_)
    if (!std::isfinite(v)) throw ValidationError("reward table entries must be finite");
}

RewardTable RewardTable::random(std::vector<std::size_t> shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  Rng rng(derive_seed(seed, "reward-table"));
  std::vector<double> values(n);
  for (double& v : values) v = rng.uniform();
  return RewardTable(std::move(shape), std::move(values));
}

RewardTable RewardTable::from_oracle(const JointSpace& space, const RewardOracle& oracle) {
  std::vector<std::size_t> shape;
  for (std::size_t i = 0; i < space.num_agents(); ++i) {
    const auto n = space.agent_action_count(i);
    if (!n || *n > kMaxEntries) throw ValidationError("reward table needs an enumerable space");
    shape.push_back(static_cast<std::size_t>(*n));
  }
  const auto total = space.joint_action_count();
  if (!total || *total > kMaxEntries) throw ValidationError("reward table exceeds 10^6 entries");
  std::vector<double> values(*total);
  for (std::uint64_t k = 0; k < *total; ++k) {
    const OracleResult r = oracle.evaluate(space.joint_unflatten(k));
    if (r.failed) throw ValidationError("oracle failed while tabulating: " + r.message);
    values[k] = r.accuracy;
  }
  return RewardTable(std::move(shape), std::move(values));
}

std::size_t RewardTable::flatten(const std::vector<std::size_t>& action) const {
  if (action.size() != shape_.size()) throw ShapeError("action does not match reward table");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (action[i] >= shape_[i]) throw ValidationError("action index out of range for reward table");
    flat = flat * shape_[i] + action[i];
  }
  return flat;
}

std::vector<std::size_t> RewardTable::unflatten(std::size_t flat) const {
  std::vector<std::size_t> a(shape_.size());
  for (std::size_t i = shape_.size(); i-- > 0;) {
    a[i] = flat % shape_[i];
    flat /= shape_[i];
  }
  return a;
}

double RewardTable::at(const std::vector<std::size_t>& action) const { return values_[flatten(action)]; }
double RewardTable::min() const { return *std::min_element(values_.begin(), values_.end()); }
double RewardTable::max() const { return *std::max_element(values_.begin(), values_.end()); }

TabularJointPolicy TabularJointPolicy::uniform(const std::vector<std::size_t>& shape) {
  TabularJointPolicy p;
  for (std::size_t s : shape) p.agents.emplace_back(s, 1.0 / static_cast<double>(s));
  return p;
}

TabularJointPolicy TabularJointPolicy::from_params(const PolicyParams& params) {
  TabularJointPolicy p;
  for (std::size_t i = 0; i < params.num_agents(); ++i) p.agents.push_back(agent_probabilities(params, i));
  return p;
}

void TabularJointPolicy::validate(const std::vector<std::size_t>& shape) const {
  if (agents.size() != shape.size()) throw ShapeError("policy agent count does not match table");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (agents[i].size() != shape[i]) throw ShapeError("policy size does not match table for agent " + std::to_string(i));
    double s = 0.0;
    for (double p : agents[i]) {
      if (!(p >= 0.0)) throw ValidationError("policy probabilities must be non-negative");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ValidationError("policy probabilities must sum to 1");
  }
}

namespace {

// Calls fn(flat, weight_excluding_agent, index_of_agent) for every joint action.
template <typename Fn>
void for_each_joint(const TabularJointPolicy& policy, const RewardTable& table, std::size_t skip, Fn&& fn) {
  const auto& shape = table.shape();
  const std::size_t n = shape.size();
  std::vector<std::size_t> idx(n, 0);
  // Prefix products of probabilities, skipping agent `skip` (weight 1 there).
  std::vector<double> prefix(n + 1, 1.0);
  auto refresh = [&](std::size_t from) {
    for (std::size_t i = from; i < n; ++i)
      prefix[i + 1] = prefix[i] * (i == skip ? 1.0 : policy.agents[i][idx[i]]);
  };
  refresh(0);
  for (std::size_t flat = 0; flat < table.size(); ++flat) {
    fn(flat, prefix[n], skip < n ? idx[skip] : 0);
    std::size_t i = n;
    while (i-- > 0) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
    if (i < n) refresh(i);
  }
}

}  // namespace

double j_init(const TabularJointPolicy& policy, const RewardTable& table) {
  policy.validate(table.shape());
  double j = 0.0;
  const auto& v = table.values();
  for_each_joint(policy, table, table.num_agents(), [&](std::size_t flat, double w, std::size_t) {
    j += w * v[flat];
  });
  return j;
}

double product_kl(const TabularJointPolicy& policy, const TabularJointPolicy& target) {
  if (policy.agents.size() != target.agents.size()) throw ShapeError("policies differ in agent count");
  double total = 0.0;
  for (std::size_t i = 0; i < policy.agents.size(); ++i) {
    const auto& p = policy.agents[i];
    const auto& q = target.agents[i];
    if (p.size() != q.size()) throw ShapeError("policies differ in action count");
    for (std::size_t a = 0; a < p.size(); ++a) {
      if (p[a] <= 0.0) continue;
      if (q[a] <= 0.0) return INFINITY;
      total += p[a] * std::log(p[a] / q[a]);
    }
  }
  return std::max(total, 0.0);
}

double j_reg(const TabularJointPolicy& policy, const TabularJointPolicy& target, const RewardTable& table,
             double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
  target.validate(table.shape());
  const double j = j_init(policy, table);
  if (lambda == 0.0) return j;
  return j - lambda * product_kl(policy, target);
}

std::vector<double> marginal_q(const TabularJointPolicy& policy, const RewardTable& table, std::size_t agent) {
  policy.validate(table.shape());
  if (agent >= table.num_agents()) throw ValidationError("agent index out of range");
  std::vector<double> q(table.shape()[agent], 0.0);
  const auto& v = table.values();
  for_each_joint(policy, table, agent, [&](std::size_t flat, double w, std::size_t a) { q[a] += w * v[flat]; });
  return q;
}

std::vector<double> tilt_best_response(const std::vector<double>& target, const std::vector<double>& qbar,
                                       double lambda) {
  if (lambda == 0.0) throw ValidationError("tilt_best_response needs lambda > 0; use argmax_response for lambda = 0");
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
  if (target.size() != qbar.size() || target.empty()) throw ShapeError("target and qbar sizes differ");
  std::vector<double> logits(target.size());
  double m = -INFINITY;
  for (std::size_t a = 0; a < target.size(); ++a) {
    if (!std::isfinite(qbar[a])) throw ValidationError("qbar must be finite");
    logits[a] = target[a] > 0.0 ? std::log(target[a]) + qbar[a] / lambda : -INFINITY;
    m = std::max(m, logits[a]);
  }
  if (!std::isfinite(m)) throw ValidationError("target distribution has no support");
  std::vector<double> out(target.size());
  double z = 0.0;
  for (std::size_t a = 0; a < out.size(); ++a) {
    out[a] = std::isfinite(logits[a]) ? std::exp(logits[a] - m) : 0.0;
    z += out[a];
  }
  for (double& p : out) p /= z;
  return out;
}

std::vector<double> argmax_response(const std::vector<double>& qbar) {
  if (qbar.empty()) throw ShapeError("empty qbar");
  const double best = *std::max_element(qbar.begin(), qbar.end());
  std::vector<double> out(qbar.size(), 0.0);
  const auto ties = static_cast<double>(std::count(qbar.begin(), qbar.end(), best));
  for (std::size_t a = 0; a < qbar.size(); ++a)
    if (qbar[a] == best) out[a] = 1.0 / ties;
  return out;
}

TabularJointPolicy divergence_iteration_step(const TabularJointPolicy& policy, const RewardTable& table,
                                             double lambda, std::size_t sweeps) {
  if (!(lambda > 0.0)) throw ValidationError("divergence iteration needs lambda > 0");
  policy.validate(table.shape());
  const TabularJointPolicy target = policy;
  TabularJointPolicy current = policy;
  for (std::size_t s = 0; s < sweeps; ++s)
    for (std::size_t i = 0; i < table.num_agents(); ++i)
      current.agents[i] = tilt_best_response(target.agents[i], marginal_q(current, table, i), lambda);
  return current;
}

BestAction brute_force_best(const RewardTable& table) {
  const auto& v = table.values();
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return {table.unflatten(best), v[best]};
}

CertificationReport certify_monotone(const RewardTable& table, const CertifyOptions& options) {
  if (!(options.lambda > 0.0)) throw ValidationError("certification needs lambda > 0");
  CertificationReport report;
  report.optimum = brute_force_best(table).value;
  const double range = table.max() - table.min();

  TabularJointPolicy pi = TabularJointPolicy::uniform(table.shape());
  double j = j_init(pi, table);
  report.rows.push_back({0, j, j, 0.0, report.optimum - j});
  double last_delta = INFINITY;
  for (std::size_t k = 1; k <= options.iterations; ++k) {
    TabularJointPolicy next = divergence_iteration_step(pi, table, options.lambda, options.sweeps);
    const double j_next = j_init(next, table);
    const double kl_prev = product_kl(next, pi);
    const double reg_next = j_next - options.lambda * kl_prev;
    report.rows.push_back({k, j_next, reg_next, kl_prev, report.optimum - j_next});
    if (j_next < j - options.monotone_slack && report.monotone) {
      report.monotone = false;
      report.violation_k = k;
      report.violation = "J_init decreased from " + std::to_string(j) + " to " + std::to_string(j_next);
    }
    // J_reg(pi^{k+1}, pi^k) >= J_reg(pi^k, pi^k) = J_init(pi^k).
    if (reg_next < j - options.monotone_slack) report.reg_monotone = false;
    last_delta = std::abs(j_next - j);
    pi = std::move(next);
    j = j_next;
  }
  report.converged = last_delta < options.convergence_tol;
  report.final_j = j;
  report.final_gap = report.optimum - j;
  report.normalized_gap = range > 0.0 ? report.final_gap / range : 0.0;
  report.final_policy = std::move(pi);
  return report;
}

}  // namespace ma2ml::verify
