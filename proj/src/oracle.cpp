#include "ma2ml/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "ma2ml/error.hpp"
#include "ma2ml/rng.hpp"

namespace ma2ml {

namespace {

constexpr double kCostLow = 300e6;
constexpr double kCostHigh = 1200e6;
constexpr double kRangeLow = 0.05;
constexpr double kRangeHigh = 0.95;

// Stream tags keep the f, g, cost and noise tables independent under one seed.
constexpr std::uint64_t kTagSeparable = 1;
constexpr std::uint64_t kTagPairwise = 2;
constexpr std::uint64_t kTagCost = 3;
constexpr std::uint64_t kTagNoise = 4;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (text.empty() || used != text.size() || !std::isfinite(v))
    throw ParseError(where + ": expected a real number, got '" + text + "'");
  return v;
}

}  // namespace

// ---- multi-objective transform -----------------------------------------------

void MultiObjectiveSpec::validate() const {
  if (!(constraint > 0.0) || !std::isfinite(constraint))
    throw ValidationError("flops_constraint must be positive");
  if (!std::isfinite(w)) throw ValidationError("w must be finite");
}

double multi_objective_reward(const OracleResult& result, const MultiObjectiveSpec& spec) {
  spec.validate();
  if (result.failed) throw ValidationError("multi-objective reward of a failed evaluation");
  if (!result.cost) throw ValidationError("multi-objective reward needs a cost");
  return result.accuracy * std::pow(*result.cost / spec.constraint, spec.w);
}

double scalar_reward(const OracleResult& result, const std::optional<MultiObjectiveSpec>& objective) {
  if (result.failed) throw ValidationError("reward of a failed evaluation: " + result.message);
  return objective ? multi_objective_reward(result, *objective) : result.accuracy;
}

// ---- SyntheticOracle -----------------------------------------------------------

SyntheticOracle::SyntheticOracle(JointSpace space, std::uint64_t seed, double coupling,
                                 std::size_t buckets, double noise)
    : space_(std::move(space)), seed_(seed), coupling_(coupling), buckets_(buckets), noise_(noise) {
  if (!(coupling >= 0.0 && coupling <= 1.0)) throw ValidationError("coupling must lie in [0, 1]");
  if (buckets < 1) throw ValidationError("bucket count must be positive");
  if (!(noise >= 0.0)) throw ValidationError("noise must be non-negative");

  const auto joint = space_.joint_action_count();
  if (joint && *joint <= kEnumerationLimit) {
    raw_min_ = INFINITY;
    raw_max_ = -INFINITY;
    for (std::uint64_t k = 0; k < *joint; ++k) {
      const double v = raw(space_.joint_unflatten(k));
      raw_min_ = std::min(raw_min_, v);
      raw_max_ = std::max(raw_max_, v);
    }
    exact_range_ = true;
    return;
  }
  bool separable_exact = coupling_ == 0.0;
  for (std::size_t i = 0; i < space_.num_agents() && separable_exact; ++i) {
    const auto n = space_.agent_action_count(i);
    separable_exact = n && *n <= kEnumerationLimit;
  }
  if (separable_exact) {
    raw_min_ = raw_max_ = 0.0;
    for (std::size_t i = 0; i < space_.num_agents(); ++i) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::uint64_t k = 0; k < *space_.agent_action_count(i); ++k) {
        const double f = separable_term(i, agent_code(i, space_.agent_unflatten(i, k)));
        lo = std::min(lo, f);
        hi = std::max(hi, f);
      }
      raw_min_ += lo;
      raw_max_ += hi;
    }
    exact_range_ = true;
    return;
  }
  // Sampled range; values outside it are clamped in accuracy().
  Rng rng(derive_seed(seed_, "normalization"));
  raw_min_ = INFINITY;
  raw_max_ = -INFINITY;
  JointAction a;
  a.choices.resize(space_.num_agents());
  for (std::size_t s = 0; s < kNormalizationSamples; ++s) {
    for (std::size_t i = 0; i < space_.num_agents(); ++i) {
      const auto& dims = space_.agent(i).dimensions;
      a.choices[i].resize(dims.size());
      for (std::size_t d = 0; d < dims.size(); ++d) a.choices[i][d] = rng.uniform_index(dims[d].cardinality);
    }
    const double v = raw(a);
    raw_min_ = std::min(raw_min_, v);
    raw_max_ = std::max(raw_max_, v);
  }
}

std::uint64_t SyntheticOracle::agent_code(std::size_t agent, const std::vector<std::size_t>& choice) const {
  if (space_.agent_action_count(agent)) return space_.agent_flatten(agent, choice);
  std::uint64_t h = 0xa0761d6478bd642fULL;
  for (std::size_t idx : choice) h = splitmix64(h ^ idx);
  return h;
}

std::uint64_t SyntheticOracle::bucket(std::size_t agent, const std::vector<std::size_t>& choice) const {
  // Flat agent index mod K by Horner's rule; valid for spaces of any size.
  const auto& dims = space_.agent(agent).dimensions;
  std::uint64_t r = 0;
  for (std::size_t d = 0; d < dims.size(); ++d) r = (r * (dims[d].cardinality % buckets_) + choice[d]) % buckets_;
  return r;
}

double SyntheticOracle::separable_term(std::size_t agent, std::uint64_t code) const {
  return hash_uniform(seed_, {kTagSeparable, agent, code});
}

double SyntheticOracle::raw(const JointAction& action) const {
  double f = 0.0;
  for (std::size_t i = 0; i < space_.num_agents(); ++i) f += separable_term(i, agent_code(i, action.choices[i]));
  double g = 0.0;
  if (coupling_ > 0.0) {
    for (std::size_t i = 0; i < space_.num_agents(); ++i)
      for (std::size_t j = i + 1; j < space_.num_agents(); ++j)
        g += hash_uniform(seed_, {kTagPairwise, i, j, bucket(i, action.choices[i]), bucket(j, action.choices[j])});
  }
  return (1.0 - coupling_) * f + coupling_ * g;
}

double SyntheticOracle::accuracy(const JointAction& action) const {
  validate_action(space_, action);
  if (raw_max_ <= raw_min_) return 0.5 * (kRangeLow + kRangeHigh);
  const double t = (raw(action) - raw_min_) / (raw_max_ - raw_min_);
  return std::clamp(kRangeLow + (kRangeHigh - kRangeLow) * t, 0.0, 1.0);
}

double SyntheticOracle::cost(const JointAction& action) const {
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < space_.num_agents(); ++i) h = splitmix64(h ^ agent_code(i, action.choices[i]));
  const double u = hash_uniform(seed_, {kTagCost, h});
  return std::exp(std::log(kCostLow) + u * (std::log(kCostHigh) - std::log(kCostLow)));
}

OracleResult SyntheticOracle::evaluate_high_fidelity(const JointAction& action) const {
  OracleResult r;
  r.accuracy = accuracy(action);
  r.cost = cost(action);
  return r;
}

OracleResult SyntheticOracle::evaluate(const JointAction& action) const {
  OracleResult r = evaluate_high_fidelity(action);
  if (noise_ > 0.0) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < space_.num_agents(); ++i) h = splitmix64(h ^ agent_code(i, action.choices[i]));
    const double u1 = 1.0 - hash_uniform(seed_, {kTagNoise, h, 1});
    const double u2 = hash_uniform(seed_, {kTagNoise, h, 2});
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    r.accuracy = std::clamp(r.accuracy + noise_ * z, 0.0, 1.0);
  }
  return r;
}

std::string SyntheticOracle::describe() const {
  std::ostringstream os;
  os << (coupling_ == 0.0 ? "separable" : "coupled") << "(seed=" << seed_ << ", coupling=" << coupling_
     << ", buckets=" << buckets_ << ", noise=" << noise_ << ")";
  return os.str();
}

std::unique_ptr<SyntheticOracle> separable_oracle(const JointSpace& space, std::uint64_t seed) {
  return std::make_unique<SyntheticOracle>(space, seed, 0.0);
}

std::unique_ptr<SyntheticOracle> coupled_oracle(const JointSpace& space, std::uint64_t seed, double coupling,
                                                std::size_t buckets) {
  return std::make_unique<SyntheticOracle>(space, seed, coupling, buckets);
}

// ---- TabularOracle -------------------------------------------------------------

std::string tabular_header(const JointSpace& space, bool with_cost) {
  std::string h;
  for (const auto& agent : space.agents())
    for (const auto& dim : agent.dimensions) h += "a_" + agent.name + "_" + dim.name + ",";
  h += "accuracy";
  if (with_cost) h += ",cost";
  return h;
}

TabularOracle TabularOracle::parse(const std::string& csv_text, const JointSpace& space) {
  TabularOracle oracle(space);
  std::istringstream in(csv_text);
  std::string line;
  std::size_t row = 0;
  auto strip = [](std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  };
  if (!std::getline(in, line)) throw ParseError("tabular oracle: empty file");
  ++row;
  strip(line);
  const auto header = split_csv_line(line);
  const std::size_t ndims = space.num_dimensions();
  bool with_cost = false;
  if (line == tabular_header(space, true))
    with_cost = true;
  else if (line != tabular_header(space, false))
    throw ParseError("tabular oracle row 1: header does not match space; expected '" +
                     tabular_header(space, true) + "'");
  (void)header;
  while (std::getline(in, line)) {
    ++row;
    strip(line);
    if (line.empty()) continue;
    const std::string where = "tabular oracle row " + std::to_string(row);
    const auto cells = split_csv_line(line);
    const std::size_t expected = ndims + (with_cost ? 2 : 1);
    if (cells.size() != expected)
      throw ParseError(where + ": expected " + std::to_string(expected) + " columns, got " +
                       std::to_string(cells.size()));
    std::string key;
    for (std::size_t k = 0; k < ndims; ++k) key += (k ? ";" : "") + cells[k];
    JointAction action;
    try {
      action = parse_action_key(space, key);
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
    OracleResult r;
    r.accuracy = parse_real(cells[ndims], where + " accuracy");
    if (r.accuracy < 0.0 || r.accuracy > 1.0) throw ParseError(where + ": accuracy must lie in [0, 1]");
    if (with_cost && !cells[ndims + 1].empty()) {
      r.cost = parse_real(cells[ndims + 1], where + " cost");
      if (!(*r.cost > 0.0)) throw ParseError(where + ": cost must be positive");
    }
    if (!oracle.rows_.emplace(std::move(action), r).second)
      throw ParseError(where + ": duplicate action " + key);
  }
  return oracle;
}

TabularOracle TabularOracle::load(const std::filesystem::path& path, const JointSpace& space) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open tabular oracle file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  TabularOracle oracle = parse(ss.str(), space);
  oracle.source_ = path.string();
  return oracle;
}

OracleResult TabularOracle::evaluate(const JointAction& action) const {
  const auto it = rows_.find(action);
  if (it == rows_.end()) return OracleResult::failure("action " + action_key(action) + " not in table");
  return it->second;
}

std::string TabularOracle::describe() const {
  return "tabular(" + (source_.empty() ? std::string("<memory>") : source_) + ", rows=" +
         std::to_string(rows_.size()) + ")";
}

void write_tabular_csv(const std::filesystem::path& path, const JointSpace& space, const RewardOracle& oracle) {
  const auto n = space.joint_action_count();
  if (!n || *n > SyntheticOracle::kEnumerationLimit)
    throw ValidationError("tabular export needs an enumerable space");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << tabular_header(space, true) << "\n";
  char buf[64];
  for (std::uint64_t k = 0; k < *n; ++k) {
    const JointAction a = space.joint_unflatten(k);
    const OracleResult r = oracle.evaluate(a);
    if (r.failed) continue;
    std::string key = action_key(a);
    std::replace(key.begin(), key.end(), ';', ',');
    out << key << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.accuracy);
    out << buf << ",";
    if (r.cost) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.cost);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace ma2ml
