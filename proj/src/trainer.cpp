#include "ma2ml/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <thread>

#include "ma2ml/error.hpp"

namespace ma2ml {

using nlohmann::json;

Variant parse_variant(const std::string& name) {
  if (name == "ma2ml") return Variant::Ma2ml;
  if (name == "lite") return Variant::Lite;
  if (name == "onpolicy") return Variant::OnPolicy;
  throw ConfigError("unknown variant '" + name + "' (expected ma2ml, lite or onpolicy)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Ma2ml: return "ma2ml";
    case Variant::Lite: return "lite";
    case Variant::OnPolicy: return "onpolicy";
  }
  return "?";
}

BaselineMode BaselineMode::parse(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "exact") return exact_mode();
    try {
      std::size_t pos = 0;
      const long long m = std::stoll(s, &pos);
      if (pos == s.size() && m >= 1) return monte_carlo(static_cast<std::size_t>(m));
    } catch (const std::exception&) {
    }
    throw ConfigError("baseline must be \"exact\" or a positive integer, got '" + s + "'");
  }
  if (j.is_number_integer() && j.get<long long>() >= 1) return monte_carlo(j.get<std::size_t>());
  throw ConfigError("baseline must be \"exact\" or a positive integer");
}

json BaselineMode::to_json() const { return exact ? json("exact") : json(samples); }

void Hyperparams::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("hyperparams." + what); };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be >= 0");
  if (!(policy_lr > 0.0) || !std::isfinite(policy_lr)) fail("policy_lr must be > 0");
  if (!(critic_lr > 0.0) || !std::isfinite(critic_lr)) fail("critic_lr must be > 0");
  if (!(tau > 0.0 && tau <= 1.0)) fail("tau must be in (0, 1]");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (minibatch_size < 1) fail("minibatch_size must be >= 1");
  if (!baseline.exact && baseline.samples < 1) fail("baseline samples must be >= 1");
  if (topk < 1) fail("topk must be >= 1");
  if (updates_per_iteration < 1) fail("updates_per_iteration must be >= 1");
  if (critic_hidden < 1) fail("critic_hidden must be >= 1");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) fail("ema_decay must be in (0, 1)");
  if (parallelism < 1) fail("parallelism must be >= 1");
}

json Hyperparams::to_json() const {
  return {{"lambda", lambda},
          {"policy_lr", policy_lr},
          {"critic_lr", critic_lr},
          {"tau", tau},
          {"batch_size", batch_size},
          {"minibatch_size", minibatch_size},
          {"baseline", baseline.to_json()},
          {"max_iter", max_iter},
          {"topk", topk},
          {"seed", seed},
          {"updates_per_iteration", updates_per_iteration},
          {"policy_optimizer", to_string(policy_optimizer)},
          {"critic_optimizer", to_string(critic_optimizer)},
          {"critic", to_string(critic)},
          {"critic_hidden", critic_hidden},
          {"ema_decay", ema_decay},
          {"buffer_capacity", buffer_capacity},
          {"parallelism", parallelism}};
}

Hyperparams Hyperparams::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("hyperparams must be an object");
  Hyperparams h;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "lambda") h.lambda = v.get<double>();
      else if (key == "policy_lr") h.policy_lr = v.get<double>();
      else if (key == "critic_lr") h.critic_lr = v.get<double>();
      else if (key == "tau") h.tau = v.get<double>();
      else if (key == "batch_size") h.batch_size = v.get<std::size_t>();
      else if (key == "minibatch_size") h.minibatch_size = v.get<std::size_t>();
      else if (key == "baseline") h.baseline = BaselineMode::parse(v);
      else if (key == "max_iter") h.max_iter = v.get<std::size_t>();
      else if (key == "topk") h.topk = v.get<std::size_t>();
      else if (key == "seed") h.seed = v.get<std::uint64_t>();
      else if (key == "updates_per_iteration") h.updates_per_iteration = v.get<std::size_t>();
      else if (key == "policy_optimizer") h.policy_optimizer = parse_optimizer(v.get<std::string>());
      else if (key == "critic_optimizer") h.critic_optimizer = parse_optimizer(v.get<std::string>());
      else if (key == "critic") h.critic = parse_critic_kind(v.get<std::string>());
      else if (key == "critic_hidden") h.critic_hidden = v.get<std::size_t>();
      else if (key == "ema_decay") h.ema_decay = v.get<double>();
      else if (key == "buffer_capacity") h.buffer_capacity = v.get<std::size_t>();
      else if (key == "parallelism") h.parallelism = v.get<std::size_t>();
      else throw ConfigError("unknown hyperparameter '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("hyperparams." + key + ": " + e.what());
    }
    if ((key == "batch_size" || key == "minibatch_size" || key == "max_iter" || key == "topk") &&
        v.is_number_integer() && v.get<long long>() < 0)
      throw ConfigError("hyperparams." + key + " must be non-negative");
  }
  return h;
}

void EmaBaseline::observe(double reward) {
  if (!initialized) {
    value = reward;
    initialized = true;
    return;
  }
  value = decay * value + (1.0 - decay) * reward;
}

double agent_log_ratio(const PolicyParams& policy, const PolicyParams& target, std::size_t agent,
                       const std::vector<std::size_t>& choice) {
  return agent_log_prob(policy, agent, choice) - agent_log_prob(target, agent, choice);
}

namespace {

// Per-dimension softmax tables of one (policy, target) snapshot, shared by
// every advantage evaluated against it.
struct Snapshot {
  // [agent][dim][choice]
  std::vector<AgentTable> prob, log_ratio;
  // Flattened alternatives per agent, filled on first exact use.
  mutable std::vector<std::vector<std::vector<std::size_t>>> alternatives;

  Snapshot(const PolicyParams& policy, const PolicyParams& target) {
    check_same_shape(policy, target);
    prob.resize(policy.num_agents());
    log_ratio.resize(policy.num_agents());
    alternatives.resize(policy.num_agents());
    for (std::size_t i = 0; i < policy.num_agents(); ++i) {
      for (std::size_t d = 0; d < policy.logits[i].size(); ++d) {
        prob[i].push_back(softmax(policy.logits[i][d]));
        const auto lp = log_softmax(policy.logits[i][d]);
        const auto lr = log_softmax(target.logits[i][d]);
        std::vector<double> diff(lp.size());
        for (std::size_t c = 0; c < lp.size(); ++c) diff[c] = lp[c] - lr[c];
        log_ratio[i].push_back(std::move(diff));
      }
    }
  }

  double ratio(std::size_t agent, const std::vector<std::size_t>& choice) const {
    double s = 0.0;
    for (std::size_t d = 0; d < choice.size(); ++d) s += log_ratio[agent][d][choice[d]];
    return s;
  }

  // Same inverse-CDF rule (and draw count) as sample_agent.
  std::vector<std::size_t> draw(std::size_t agent, Rng& rng) const {
    const AgentTable& table = prob[agent];
    std::vector<std::size_t> choice(table.size());
    for (std::size_t d = 0; d < table.size(); ++d) {
      const auto& p = table[d];
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
};

double baseline_from(const Critic& q, const JointSpace& space, const Snapshot& snap, const JointAction& action,
                     std::size_t agent, double lambda, const BaselineMode& mode, Rng& rng) {
  if (agent >= space.num_agents()) throw ValidationError("agent index out of range");
  if (mode.exact) {
    auto& alts = snap.alternatives[agent];
    if (alts.empty()) {
      const auto n = space.agent_action_count(agent);
      if (!n || *n > BaselineMode::kExactLimit)
        throw ValidationError("exact baseline needs at most " + std::to_string(BaselineMode::kExactLimit) +
                              " actions for agent '" + space.agent(agent).name + "'");
      alts.resize(static_cast<std::size_t>(*n));
      for (std::size_t k = 0; k < alts.size(); ++k) alts[k] = space.agent_unflatten(agent, k);
    }
    const auto qs = q.predict_alternatives(action, agent, alts);
    double b = 0.0;
    for (std::size_t k = 0; k < alts.size(); ++k) {
      double p = 1.0;
      for (std::size_t d = 0; d < alts[k].size(); ++d) p *= snap.prob[agent][d][alts[k][d]];
      b += p * (lambda > 0.0 ? qs[k] - lambda * snap.ratio(agent, alts[k]) : qs[k]);
    }
    return b;
  }
  if (mode.samples < 1) throw ValidationError("Monte Carlo baseline needs at least one sample");
  std::vector<std::vector<std::size_t>> alts(mode.samples);
  for (auto& a : alts) a = snap.draw(agent, rng);
  const auto qs = q.predict_alternatives(action, agent, alts);
  double b = 0.0;
  for (std::size_t m = 0; m < alts.size(); ++m)
    b += lambda > 0.0 ? qs[m] - lambda * snap.ratio(agent, alts[m]) : qs[m];
  return b / static_cast<double>(alts.size());
}

double advantage_from(const Critic& q, const JointSpace& space, const Snapshot& snap, const JointAction& action,
                      double q_action, std::size_t agent, double lambda, const BaselineMode& mode, Rng& rng) {
  const double b = baseline_from(q, space, snap, action, agent, lambda, mode, rng);
  double a = q_action - b;
  if (lambda > 0.0) a -= lambda * snap.ratio(agent, action.choices[agent]);
  return a;
}

LogitGradient zeros_like(const PolicyParams& p) {
  LogitGradient g{p.logits};
  for (auto& agent : g.values)
    for (auto& dim : agent) std::fill(dim.begin(), dim.end(), 0.0);
  return g;
}

// into += scale * (onehot(choice) - prob), per dimension.
void add_score(AgentTable& into, const AgentTable& prob, const std::vector<std::size_t>& choice, double scale) {
  for (std::size_t d = 0; d < into.size(); ++d) {
    for (std::size_t c = 0; c < into[d].size(); ++c) into[d][c] -= scale * prob[d][c];
    into[d][choice[d]] += scale;
  }
}

void check_finite(const LogitGradient& g) {
  for (const auto& agent : g.values)
    for (const auto& dim : agent)
      for (double v : dim)
        if (!std::isfinite(v)) throw NumericError("non-finite policy gradient");
}

}  // namespace

double counterfactual_baseline(const Critic& q, const JointSpace& space, const PolicyParams& policy,
                               const PolicyParams& target, const JointAction& action, std::size_t agent,
                               double lambda, const BaselineMode& mode, Rng& rng) {
  check_action_shape(policy, action);
  return baseline_from(q, space, Snapshot(policy, target), action, agent, lambda, mode, rng);
}

double advantage(const Critic& q, const JointSpace& space, const PolicyParams& policy, const PolicyParams& target,
                 const JointAction& action, std::size_t agent, double lambda, const BaselineMode& mode, Rng& rng) {
  check_action_shape(policy, action);
  return advantage_from(q, space, Snapshot(policy, target), action, q.predict(action), agent, lambda, mode, rng);
}

LogitGradient policy_gradient(const Critic& q, const JointSpace& space, const PolicyParams& policy,
                              const PolicyParams& target, std::span<const Experience> minibatch, double lambda,
                              const BaselineMode& mode, Rng& rng) {
  if (minibatch.empty()) throw ValidationError("policy update needs a nonempty minibatch");
  const Snapshot snap(policy, target);
  LogitGradient g = zeros_like(policy);
  const double inv = 1.0 / static_cast<double>(minibatch.size());
  for (const Experience& e : minibatch) {
    check_action_shape(policy, e.action);
    const double q_action = q.predict(e.action);
    for (std::size_t i = 0; i < policy.num_agents(); ++i) {
      const double adv = advantage_from(q, space, snap, e.action, q_action, i, lambda, mode, rng);
      add_score(g.values[i], snap.prob[i], e.action.choices[i], adv * inv);
    }
  }
  check_finite(g);
  return g;
}

LogitGradient lite_gradient(const PolicyParams& policy, std::span<const Experience> batch, double b) {
  if (batch.empty()) throw ValidationError("lite update needs a nonempty batch");
  std::vector<AgentTable> prob(policy.num_agents());
  for (std::size_t i = 0; i < policy.num_agents(); ++i)
    for (const auto& logits : policy.logits[i]) prob[i].push_back(softmax(logits));
  LogitGradient g = zeros_like(policy);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const Experience& e : batch) {
    check_action_shape(policy, e.action);
    const double adv = e.reward - b;
    for (std::size_t i = 0; i < policy.num_agents(); ++i) add_score(g.values[i], prob[i], e.action.choices[i], adv * inv);
  }
  check_finite(g);
  return g;
}

PolicyParams ascend(const PolicyParams& policy, const LogitGradient& grad, double lr,
                    std::vector<ParamOptimizer>* optimizers) {
  if (grad.values.size() != policy.logits.size()) throw ShapeError("gradient does not match policy");
  if (optimizers && optimizers->size() != policy.num_agents())
    throw ShapeError("need one optimizer per agent");
  PolicyParams out = policy;
  for (std::size_t i = 0; i < out.num_agents(); ++i) {
    auto& agent = out.logits[i];
    if (grad.values[i].size() != agent.size()) throw ShapeError("gradient does not match policy");
    if (!optimizers) {
      for (std::size_t d = 0; d < agent.size(); ++d)
        for (std::size_t c = 0; c < agent[d].size(); ++c) agent[d][c] += lr * grad.values[i][d][c];
      continue;
    }
    std::vector<double> flat, neg;
    for (std::size_t d = 0; d < agent.size(); ++d) {
      if (grad.values[i][d].size() != agent[d].size()) throw ShapeError("gradient does not match policy");
      for (std::size_t c = 0; c < agent[d].size(); ++c) {
        flat.push_back(agent[d][c]);
        neg.push_back(-grad.values[i][d][c]);
      }
    }
    (*optimizers)[i].descend(flat, neg, lr);
    std::size_t k = 0;
    for (auto& dim : agent)
      for (double& v : dim) v = flat[k++];
  }
  return out;
}

PolicyParams policy_update(const Critic& q, const JointSpace& space, const PolicyParams& policy,
                           const PolicyParams& target, std::span<const Experience> minibatch, double lambda,
                           double lr, const BaselineMode& mode, Rng& rng) {
  return ascend(policy, policy_gradient(q, space, policy, target, minibatch, lambda, mode, rng), lr);
}

PolicyParams lite_update(const PolicyParams& policy, std::span<const Experience> batch, EmaBaseline& ema,
                         double lr, std::vector<ParamOptimizer>* optimizers) {
  if (batch.empty()) throw ValidationError("lite update needs a nonempty batch");
  double mean = 0.0;
  for (const auto& e : batch) mean += e.reward;
  mean /= static_cast<double>(batch.size());
  if (!ema.initialized) {
    ema.value = mean;
    ema.initialized = true;
  }
  PolicyParams out = ascend(policy, lite_gradient(policy, batch, ema.value), lr, optimizers);
  ema.observe(mean);
  return out;
}

bool topk_before(const PipelineEntry& a, const PipelineEntry& b) {
  if (a.reward != b.reward) return a.reward > b.reward;
  if (a.iteration != b.iteration) return a.iteration < b.iteration;
  return a.action < b.action;
}

namespace {

bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json entry_to_json(const PipelineEntry& e) {
  return {{"iteration", e.iteration},
          {"index", e.index},
          {"action", action_to_json(e.action)},
          {"reward", e.reward},
          {"accuracy", e.accuracy},
          {"cost", e.cost ? json(*e.cost) : json(nullptr)},
          {"failed", e.failed},
          {"message", e.message}};
}

PipelineEntry entry_from_json(const json& j) {
  PipelineEntry e;
  e.iteration = j.at("iteration").get<std::uint64_t>();
  e.index = j.at("index").get<std::size_t>();
  e.action = action_from_json(j.at("action"));
  e.reward = j.at("reward").get<double>();
  e.accuracy = j.at("accuracy").get<double>();
  if (!j.at("cost").is_null()) e.cost = j.at("cost").get<double>();
  e.failed = j.at("failed").get<bool>();
  e.message = j.at("message").get<std::string>();
  return e;
}

}  // namespace

bool IterationSummary::operator==(const IterationSummary& o) const {
  return iteration == o.iteration && evaluated == o.evaluated && failed == o.failed &&
         same_number(batch_mean, o.batch_mean) && same_number(batch_max, o.batch_max) &&
         same_number(critic_loss, o.critic_loss) && entropy == o.entropy && kl == o.kl;
}

std::vector<double> RunRecord::best_so_far() const {
  std::vector<double> out;
  out.reserve(pipelines.size());
  double best = -INFINITY;
  for (const auto& p : pipelines) {
    if (!p.failed) best = std::max(best, p.reward);
    out.push_back(best);
  }
  return out;
}

std::vector<double> RunRecord::topk_mean_curve(std::size_t k) const {
  std::multiset<double, std::greater<>> rewards;
  std::vector<double> out;
  std::size_t next = 0;
  for (const auto& it : iterations) {
    while (next < pipelines.size() && pipelines[next].iteration <= it.iteration) {
      if (!pipelines[next].failed) rewards.insert(pipelines[next].reward);
      ++next;
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (auto r = rewards.begin(); r != rewards.end() && n < k; ++r, ++n) sum += *r;
    out.push_back(n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

json record_to_json(const RunRecord& record) {
  json j;
  j["pipelines"] = json::array();
  for (const auto& p : record.pipelines) j["pipelines"].push_back(entry_to_json(p));
  j["iterations"] = json::array();
  for (const auto& s : record.iterations)
    j["iterations"].push_back({{"iteration", s.iteration},
                               {"evaluated", s.evaluated},
                               {"failed", s.failed},
                               {"batch_mean", number_or_null(s.batch_mean)},
                               {"batch_max", number_or_null(s.batch_max)},
                               {"critic_loss", number_or_null(s.critic_loss)},
                               {"entropy", s.entropy},
                               {"kl", s.kl}});
  j["topk"] = json::array();
  for (const auto& p : record.topk) j["topk"].push_back(entry_to_json(p));
  j["retrained"] = json::array();
  for (const auto& p : record.retrained) j["retrained"].push_back(entry_to_json(p));
  return j;
}

RunRecord record_from_json(const json& j) {
  RunRecord r;
  for (const auto& p : j.at("pipelines")) r.pipelines.push_back(entry_from_json(p));
  for (const auto& s : j.at("iterations")) {
    IterationSummary it;
    it.iteration = s.at("iteration").get<std::uint64_t>();
    it.evaluated = s.at("evaluated").get<std::size_t>();
    it.failed = s.at("failed").get<std::size_t>();
    it.batch_mean = number_or_nan(s.at("batch_mean"));
    it.batch_max = number_or_nan(s.at("batch_max"));
    it.critic_loss = number_or_nan(s.at("critic_loss"));
    it.entropy = s.at("entropy").get<std::vector<double>>();
    it.kl = s.at("kl").get<std::vector<double>>();
    r.iterations.push_back(std::move(it));
  }
  for (const auto& p : j.at("topk")) r.topk.push_back(entry_from_json(p));
  for (const auto& p : j.at("retrained")) r.retrained.push_back(entry_from_json(p));
  return r;
}

Trainer::Trainer(JointSpace space, std::shared_ptr<const RewardOracle> oracle, TrainerOptions options)
    : space_(std::move(space)),
      oracle_(std::move(oracle)),
      options_(std::move(options)),
      buffer_(options_.hyper.buffer_capacity),
      sampling_rng_(derive_seed(options_.hyper.seed, "sampling")),
      buffer_rng_(derive_seed(options_.hyper.seed, "buffer")),
      baseline_rng_(derive_seed(options_.hyper.seed, "baseline")) {
  if (!oracle_) throw ConfigError("trainer needs an oracle");
  options_.hyper.validate();
  if (options_.objective) options_.objective->validate();
  if (options_.failure_patience < 1) throw ValidationError("failure_patience must be >= 1");
  const Hyperparams& h = options_.hyper;
  policy_ = init_uniform(space_);
  target_ = policy_;
  policy_opt_.assign(space_.num_agents(), ParamOptimizer(h.policy_optimizer));
  ema_.decay = h.ema_decay;
  if (options_.variant != Variant::Lite) {
    Rng init(derive_seed(h.seed, "critic-init"));
    critic_ = make_critic(h.critic, space_, h.critic_hidden, init, h.critic_optimizer);
  }
}

std::vector<OracleResult> Trainer::evaluate_batch(const std::vector<JointAction>& actions) const {
  std::vector<OracleResult> results(actions.size());
  auto eval_one = [&](std::size_t k) {
    try {
      results[k] = oracle_->evaluate(actions[k]);
    } catch (const std::exception& e) {
      results[k] = OracleResult::failure(std::string("oracle error: ") + e.what());
    }
  };
  std::size_t workers = options_.hyper.parallelism;
  if (oracle_->max_concurrency() > 0) workers = std::min(workers, oracle_->max_concurrency());
  workers = std::min(workers, actions.size());
  if (workers <= 1) {
    for (std::size_t k = 0; k < actions.size(); ++k) eval_one(k);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < actions.size(); k = next++) eval_one(k);
    });
  for (auto& t : pool) t.join();
  return results;
}

double Trainer::update_actor_critic(std::uint64_t iteration) {
  const Hyperparams& h = options_.hyper;
  double loss_sum = 0.0;
  buffer_.reset_audit();
  for (std::size_t u = 0; u < h.updates_per_iteration; ++u) {
    const auto mb = options_.variant == Variant::OnPolicy
                        ? buffer_.sample_since(h.minibatch_size, iteration, buffer_rng_)
                        : buffer_.sample(h.minibatch_size, buffer_rng_);
    loss_sum += critic_->train(mb, h.critic_lr);
    const LogitGradient g = policy_gradient(*critic_, space_, policy_, target_, mb, h.lambda, h.baseline,
                                            baseline_rng_);
    policy_ = ascend(policy_, g, h.policy_lr, &policy_opt_);
    target_ = soft_update(target_, policy_, h.tau);
  }
  return loss_sum / static_cast<double>(h.updates_per_iteration);
}

void Trainer::update_lite(std::span<const Experience> fresh) {
  const Hyperparams& h = options_.hyper;
  for (std::size_t u = 0; u < h.updates_per_iteration; ++u) {
    // The EMA absorbs each batch once; repeated steps reuse its value.
    EmaBaseline scratch = ema_;
    policy_ = lite_update(policy_, fresh, scratch, h.policy_lr, &policy_opt_);
    if (u + 1 == h.updates_per_iteration) ema_ = scratch;
  }
}

void Trainer::refresh_topk(std::span<const PipelineEntry> fresh) {
  auto& top = record_.topk;
  for (const auto& e : fresh)
    if (!e.failed) top.push_back(e);
  std::sort(top.begin(), top.end(), topk_before);
  if (top.size() > options_.hyper.topk) top.resize(options_.hyper.topk);
}

const IterationSummary& Trainer::run_iteration() {
  const Hyperparams& h = options_.hyper;
  const std::uint64_t it = iteration_ + 1;

  std::vector<JointAction> actions;
  actions.reserve(h.batch_size);
  for (std::size_t k = 0; k < h.batch_size; ++k) actions.push_back(sample(policy_, sampling_rng_).action);
  const auto results = evaluate_batch(actions);

  std::vector<PipelineEntry> entries;
  std::vector<Experience> fresh;
  IterationSummary s;
  s.iteration = it;
  double sum = 0.0;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    PipelineEntry e;
    e.iteration = it;
    e.index = k;
    e.action = actions[k];
    const OracleResult& r = results[k];
    e.accuracy = r.accuracy;
    e.cost = r.cost;
    e.failed = r.failed;
    e.message = r.message;
    if (!e.failed) {
      try {
        e.reward = scalar_reward(r, options_.objective);
        if (!std::isfinite(e.reward)) throw ValidationError("non-finite reward");
      } catch (const ValidationError& err) {
        e.failed = true;
        e.message = err.what();
      }
    }
    if (e.failed) {
      ++s.failed;
    } else {
      ++s.evaluated;
      sum += e.reward;
      s.batch_max = std::isnan(s.batch_max) ? e.reward : std::max(s.batch_max, e.reward);
      fresh.push_back({e.action, e.reward, it});
    }
    entries.push_back(std::move(e));
  }
  if (!fresh.empty()) {
    s.batch_mean = sum / static_cast<double>(fresh.size());
    for (const auto& x : fresh) buffer_.push(x);
    if (options_.variant == Variant::Lite)
      update_lite(fresh);
    else
      s.critic_loss = update_actor_critic(it);
  }
  s.entropy = entropy(policy_);
  s.kl = kl(policy_, target_);

  record_.pipelines.insert(record_.pipelines.end(), entries.begin(), entries.end());
  refresh_topk(entries);
  record_.iterations.push_back(std::move(s));
  iteration_ = it;

  failure_streak_ = 2 * record_.iterations.back().failed > h.batch_size ? failure_streak_ + 1 : 0;
  if (failure_streak_ >= options_.failure_patience) {
    std::string last;
    for (const auto& e : entries)
      if (e.failed) last = e.message;
    throw SearchAborted("oracle failed on more than half of the batch for " + std::to_string(failure_streak_) +
                        " consecutive iterations; last error: " + last);
  }
  return record_.iterations.back();
}

void Trainer::run(std::optional<std::size_t> limit) {
  std::size_t done = 0;
  while (!finished() && (!limit || done < *limit)) {
    run_iteration();
    ++done;
  }
}

void Trainer::retrain_topk() {
  record_.retrained.clear();
  if (!oracle_->has_high_fidelity()) return;
  std::vector<PipelineEntry> out;
  for (const auto& e : record_.topk) {
    PipelineEntry r = e;
    const OracleResult hf = oracle_->evaluate_high_fidelity(e.action);
    r.accuracy = hf.accuracy;
    r.cost = hf.cost;
    r.failed = hf.failed;
    r.message = hf.message;
    if (!r.failed) {
      try {
        r.reward = scalar_reward(hf, options_.objective);
      } catch (const ValidationError& err) {
        r.failed = true;
        r.message = err.what();
      }
    }
    out.push_back(std::move(r));
  }
  std::stable_sort(out.begin(), out.end(), [](const PipelineEntry& a, const PipelineEntry& b) {
    if (a.failed != b.failed) return !a.failed;
    return topk_before(a, b);
  });
  record_.retrained = std::move(out);
}

JointAction Trainer::greedy_action() const {
  JointAction a;
  for (const auto& agent : policy_.logits) {
    std::vector<std::size_t> choice;
    for (const auto& dim : agent)
      choice.push_back(static_cast<std::size_t>(std::max_element(dim.begin(), dim.end()) - dim.begin()));
    a.choices.push_back(std::move(choice));
  }
  return a;
}

json Trainer::checkpoint() const {
  json opt = json::array();
  for (const auto& o : policy_opt_) opt.push_back(o.to_json());
  return {{"format", 1},
          {"space_fingerprint", space_.fingerprint()},
          {"variant", to_string(options_.variant)},
          {"hyperparams", options_.hyper.to_json()},
          {"iteration", iteration_},
          {"failure_streak", failure_streak_},
          {"policy", policy_to_json(policy_, space_)},
          {"target", policy_to_json(target_, space_)},
          {"critic", critic_ ? critic_->to_json() : json(nullptr)},
          {"buffer", buffer_.to_json()},
          {"ema", {{"value", ema_.value}, {"decay", ema_.decay}, {"initialized", ema_.initialized}}},
          {"policy_optimizers", opt},
          {"rng",
           {{"sampling", sampling_rng_.state()},
            {"buffer", buffer_rng_.state()},
            {"baseline", baseline_rng_.state()}}},
          {"record", record_to_json(record_)}};
}

void Trainer::restore(const json& c) {
  try {
    if (c.at("space_fingerprint").get<std::string>() != space_.fingerprint())
      throw ConfigError("checkpoint was written for a different space");
    if (c.at("variant").get<std::string>() != to_string(options_.variant))
      throw ConfigError("checkpoint variant differs from the configured one");
    if (c.at("hyperparams") != options_.hyper.to_json())
      throw ConfigError("checkpoint hyperparameters differ from the configured ones");
    iteration_ = c.at("iteration").get<std::uint64_t>();
    failure_streak_ = c.at("failure_streak").get<std::size_t>();
    policy_ = policy_from_json(c.at("policy"), space_);
    target_ = policy_from_json(c.at("target"), space_);
    if (critic_) critic_->load_json(c.at("critic"));
    buffer_ = ReplayBuffer::from_json(c.at("buffer"), space_);
    const auto& e = c.at("ema");
    ema_.value = e.at("value").get<double>();
    ema_.decay = e.at("decay").get<double>();
    ema_.initialized = e.at("initialized").get<bool>();
    const auto& opt = c.at("policy_optimizers");
    if (opt.size() != policy_opt_.size()) throw ConfigError("checkpoint optimizer count mismatch");
    for (std::size_t i = 0; i < opt.size(); ++i) policy_opt_[i].load_json(opt[i]);
    sampling_rng_.restore(c.at("rng").at("sampling").get<std::string>());
    buffer_rng_.restore(c.at("rng").at("buffer").get<std::string>());
    baseline_rng_.restore(c.at("rng").at("baseline").get<std::string>());
    record_ = record_from_json(c.at("record"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

RunRecord run_search(const JointSpace& space, std::shared_ptr<const RewardOracle> oracle,
                     const TrainerOptions& options) {
  Trainer t(space, std::move(oracle), options);
  t.run();
  t.retrain_topk();
  return t.record();
}

std::size_t evaluations_to_reach(const RunRecord& record, double threshold, std::size_t budget) {
  const auto best = record.best_so_far();
  const std::size_t n = std::min(budget, best.size());
  for (std::size_t k = 0; k < n; ++k)
    if (best[k] >= threshold) return k + 1;
  return budget + 1;
}

}  // namespace ma2ml
