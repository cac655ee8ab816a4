#include "ma2ml/critic.hpp"

#include <cmath>

#include "ma2ml/error.hpp"

namespace ma2ml {

// ---- ReplayBuffer ---------------------------------------------------------

void ReplayBuffer::push(Experience exp) {
  if (!std::isfinite(exp.reward)) throw ValidationError("experience reward must be finite");
  entries_.push_back(std::move(exp));
  if (capacity_ > 0 && entries_.size() > capacity_) entries_.pop_front();
}

std::vector<Experience> ReplayBuffer::draw(std::size_t first, std::size_t batch_size, Rng& rng) {
  if (first >= entries_.size()) throw ValidationError("cannot sample from an empty replay buffer");
  const std::uint64_t span = entries_.size() - first;
  std::vector<Experience> out;
  out.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const Experience& e = entries_[first + rng.uniform_index(span)];
    audit_.draws++;
    audit_.min_iteration = std::min(audit_.min_iteration, e.iteration);
    out.push_back(e);
  }
  return out;
}

std::vector<Experience> ReplayBuffer::sample(std::size_t batch_size, Rng& rng) {
  return draw(0, batch_size, rng);
}

std::vector<Experience> ReplayBuffer::sample_since(std::size_t batch_size, std::uint64_t min_iteration,
                                                   Rng& rng) {
  // Iterations are pushed in non-decreasing order, so the eligible entries are a suffix.
  std::size_t first = entries_.size();
  while (first > 0 && entries_[first - 1].iteration >= min_iteration) --first;
  return draw(first, batch_size, rng);
}

nlohmann::json ReplayBuffer::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries_)
    rows.push_back({{"action", action_to_json(e.action)}, {"reward", e.reward}, {"iteration", e.iteration}});
  return {{"capacity", capacity_}, {"entries", rows}};
}

ReplayBuffer ReplayBuffer::from_json(const nlohmann::json& j, const JointSpace& space) {
  ReplayBuffer buf(j.at("capacity").get<std::size_t>());
  for (const auto& row : j.at("entries")) {
    Experience e{action_from_json(row.at("action")), row.at("reward").get<double>(),
                 row.at("iteration").get<std::uint64_t>()};
    validate_action(space, e.action);
    buf.push(std::move(e));
  }
  return buf;
}

// ---- Critic ---------------------------------------------------------------

std::vector<double> Critic::predict_alternatives(const JointAction& base, std::size_t agent,
                                                 std::span<const std::vector<std::size_t>> alternatives) const {
  JointAction a = base;
  std::vector<double> out;
  out.reserve(alternatives.size());
  for (const auto& alt : alternatives) {
    a.choices.at(agent) = alt;
    out.push_back(predict(a));
  }
  return out;
}

CriticKind parse_critic_kind(const std::string& name) {
  if (name == "neural") return CriticKind::Neural;
  if (name == "tabular") return CriticKind::Tabular;
  throw ConfigError("unknown critic '" + name + "' (expected neural or tabular)");
}

std::string to_string(CriticKind kind) { return kind == CriticKind::Neural ? "neural" : "tabular"; }

std::unique_ptr<Critic> make_critic(CriticKind kind, const JointSpace& space, std::size_t hidden,
                                    Rng& init_rng, OptimizerKind optimizer) {
  if (kind == CriticKind::Tabular) return std::make_unique<TabularQ>(space);
  return std::make_unique<NeuralQ>(space, hidden, init_rng, optimizer);
}

// ---- TabularQ -------------------------------------------------------------

TabularQ::TabularQ(const JointSpace& space) : space_(space) {
  const auto n = space.joint_action_count();
  if (!n || *n > kMaxCells)
    throw ValidationError("tabular critic needs at most 10^6 joint actions");
  mean_.assign(*n, 0.0);
  count_.assign(*n, 0);
}

std::optional<double> TabularQ::lookup(const JointAction& action) const {
  validate_action(space_, action);
  const auto cell = space_.joint_flatten(action);
  if (count_[cell] == 0) return std::nullopt;
  return mean_[cell];
}

double TabularQ::q_eval(const JointAction& action) const {
  const auto v = lookup(action);
  if (!v) throw UnknownCellError("tabular critic has no data for action " + action_key(action));
  return *v;
}

std::uint64_t TabularQ::count(const JointAction& action) const {
  validate_action(space_, action);
  return count_[space_.joint_flatten(action)];
}

double TabularQ::predict(const JointAction& action) const {
  if (const auto v = lookup(action)) return *v;
  return total_count_ ? total_sum_ / static_cast<double>(total_count_) : 0.0;
}

void TabularQ::fit(std::span<const Experience> batch) {
  for (const auto& e : batch) {
    validate_action(space_, e.action);
    const auto cell = space_.joint_flatten(e.action);
    count_[cell]++;
    mean_[cell] += (e.reward - mean_[cell]) / static_cast<double>(count_[cell]);
    total_sum_ += e.reward;
    total_count_++;
  }
}

double TabularQ::train(std::span<const Experience> batch, double) {
  if (batch.empty()) throw ValidationError("critic update needs a non-empty batch");
  double loss = 0.0;
  for (const auto& e : batch) {
    const double r = predict(e.action) - e.reward;
    loss += r * r;
  }
  fit(batch);
  return loss / static_cast<double>(batch.size());
}

nlohmann::json TabularQ::to_json() const {
  return {{"kind", "tabular"}, {"mean", mean_}, {"count", count_},
          {"total_sum", total_sum_}, {"total_count", total_count_}};
}

void TabularQ::load_json(const nlohmann::json& j) {
  if (j.at("kind") != "tabular") throw ValidationError("checkpoint critic is not tabular");
  auto mean = j.at("mean").get<std::vector<double>>();
  auto count = j.at("count").get<std::vector<std::uint64_t>>();
  if (mean.size() != mean_.size() || count.size() != count_.size())
    throw ShapeError("tabular critic checkpoint has the wrong size");
  mean_ = std::move(mean);
  count_ = std::move(count);
  total_sum_ = j.at("total_sum").get<double>();
  total_count_ = j.at("total_count").get<std::uint64_t>();
}

// ---- NeuralQ --------------------------------------------------------------

NeuralQ::NeuralQ(const JointSpace& space, std::size_t hidden, OptimizerKind optimizer)
    : space_(space),
      width_(space.onehot_width()),
      hidden_(hidden),
      params_(space.onehot_width() * hidden + 2 * hidden + 1, 0.0),
      optimizer_(optimizer) {
  if (hidden == 0) throw ValidationError("critic hidden width must be positive");
}

NeuralQ::NeuralQ(const JointSpace& space, std::size_t hidden, Rng& init_rng, OptimizerKind optimizer)
    : NeuralQ(space, hidden, optimizer) {
  const double r1 = 1.0 / std::sqrt(static_cast<double>(width_));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (std::size_t k = 0; k < w2(); ++k) params_[k] = r1 * (2.0 * init_rng.uniform() - 1.0);
  for (std::size_t k = w2(); k < params_.size(); ++k) params_[k] = r2 * (2.0 * init_rng.uniform() - 1.0);
}

NeuralQ NeuralQ::zeros(const JointSpace& space, std::size_t hidden) {
  return NeuralQ(space, hidden, OptimizerKind::Sgd);
}

void NeuralQ::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size()) throw ShapeError("critic parameter vector has the wrong size");
  params_.assign(values.begin(), values.end());
}

void NeuralQ::accumulate_preactivation(const JointAction& action, std::vector<double>& pre) const {
  for (std::size_t a = 0; a < action.choices.size(); ++a)
    for (std::size_t d = 0; d < action.choices[a].size(); ++d) {
      const double* row = &params_[w1(space_.onehot_offset(a, d) + action.choices[a][d])];
      for (std::size_t h = 0; h < hidden_; ++h) pre[h] += row[h];
    }
}

double NeuralQ::output_from_preactivation(const std::vector<double>& pre) const {
  double out = params_[b2()];
  for (std::size_t h = 0; h < hidden_; ++h) out += params_[w2() + h] * std::tanh(pre[h]);
  return out;
}

double NeuralQ::predict(const JointAction& action) const {
  validate_action(space_, action);
  std::vector<double> pre(params_.begin() + b1(), params_.begin() + w2());
  accumulate_preactivation(action, pre);
  return output_from_preactivation(pre);
}

std::vector<double> NeuralQ::predict_alternatives(
    const JointAction& base, std::size_t agent,
    std::span<const std::vector<std::size_t>> alternatives) const {
  validate_action(space_, base);
  // Pre-activation of everything except `agent`, shared by all alternatives.
  std::vector<double> rest(params_.begin() + b1(), params_.begin() + w2());
  for (std::size_t a = 0; a < base.choices.size(); ++a) {
    if (a == agent) continue;
    for (std::size_t d = 0; d < base.choices[a].size(); ++d) {
      const double* row = &params_[w1(space_.onehot_offset(a, d) + base.choices[a][d])];
      for (std::size_t h = 0; h < hidden_; ++h) rest[h] += row[h];
    }
  }
  std::vector<double> out;
  out.reserve(alternatives.size());
  std::vector<double> pre(hidden_);
  for (const auto& alt : alternatives) {
    pre = rest;
    for (std::size_t d = 0; d < alt.size(); ++d) {
      const double* row = &params_[w1(space_.onehot_offset(agent, d) + alt[d])];
      for (std::size_t h = 0; h < hidden_; ++h) pre[h] += row[h];
    }
    out.push_back(output_from_preactivation(pre));
  }
  return out;
}

double NeuralQ::loss(std::span<const Experience> batch) const {
  if (batch.empty()) throw ValidationError("critic loss needs a non-empty batch");
  double total = 0.0;
  for (const auto& e : batch) {
    const double r = predict(e.action) - e.reward;
    total += r * r;
  }
  return total / static_cast<double>(batch.size());
}

std::vector<double> NeuralQ::gradient(std::span<const Experience> batch) const {
  if (batch.empty()) throw ValidationError("critic gradient needs a non-empty batch");
  std::vector<double> g(params_.size(), 0.0);
  std::vector<double> pre(hidden_), act(hidden_);
  const double scale = 2.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    validate_action(space_, e.action);
    pre.assign(params_.begin() + b1(), params_.begin() + w2());
    accumulate_preactivation(e.action, pre);
    double out = params_[b2()];
    for (std::size_t h = 0; h < hidden_; ++h) {
      act[h] = std::tanh(pre[h]);
      out += params_[w2() + h] * act[h];
    }
    const double dout = scale * (out - e.reward);
    g[b2()] += dout;
    for (std::size_t h = 0; h < hidden_; ++h) {
      g[w2() + h] += dout * act[h];
      const double dpre = dout * params_[w2() + h] * (1.0 - act[h] * act[h]);
      pre[h] = dpre;
      g[b1() + h] += dpre;
    }
    for (std::size_t a = 0; a < e.action.choices.size(); ++a)
      for (std::size_t d = 0; d < e.action.choices[a].size(); ++d) {
        double* row = &g[w1(space_.onehot_offset(a, d) + e.action.choices[a][d])];
        for (std::size_t h = 0; h < hidden_; ++h) row[h] += pre[h];
      }
  }
  return g;
}

double NeuralQ::train(std::span<const Experience> batch, double lr) {
  const double before = loss(batch);
  if (!std::isfinite(before)) throw NumericError("critic loss is not finite; reduce the critic learning rate");
  const auto g = gradient(batch);
  optimizer_.descend(params_, g, lr);
  return before;
}

nlohmann::json NeuralQ::to_json() const {
  return {{"kind", "neural"}, {"hidden", hidden_}, {"params", params_}, {"optimizer", optimizer_.to_json()}};
}

void NeuralQ::load_json(const nlohmann::json& j) {
  if (j.at("kind") != "neural") throw ValidationError("checkpoint critic is not neural");
  if (j.at("hidden").get<std::size_t>() != hidden_) throw ShapeError("critic checkpoint has a different hidden width");
  set_parameters(j.at("params").get<std::vector<double>>());
  optimizer_.load_json(j.at("optimizer"));
}

}  // namespace ma2ml
