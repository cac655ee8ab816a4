#include "ma2ml/space.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ma2ml/error.hpp"
#include "ma2ml/rng.hpp"

namespace ma2ml {

namespace {

constexpr std::uint64_t kCountLimit = std::uint64_t{1} << 62;

std::optional<std::uint64_t> checked_mul(std::optional<std::uint64_t> acc, std::uint64_t k) {
  if (!acc || *acc > kCountLimit / k) return std::nullopt;
  return *acc * k;
}

std::string dim_path(std::size_t a, std::size_t d) {
  return "agents[" + std::to_string(a) + "].dimensions[" + std::to_string(d) + "]";
}

std::string label_text(const nlohmann::json& v, const std::string& path) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw ValidationError(path + ": labels must be strings or numbers");
}

}  // namespace

JointSpace::JointSpace(std::vector<AgentSpace> agents) : agents_(std::move(agents)) {
  if (agents_.empty()) throw ValidationError("agents: at least one agent is required");
  std::set<std::string> agent_names;
  offsets_.resize(agents_.size());
  for (std::size_t a = 0; a < agents_.size(); ++a) {
    const AgentSpace& agent = agents_[a];
    const std::string apath = "agents[" + std::to_string(a) + "]";
    if (agent.name.empty()) throw ValidationError(apath + ".name: must be non-empty");
    if (!agent_names.insert(agent.name).second)
      throw ValidationError(apath + ".name: duplicate agent name '" + agent.name + "'");
    if (agent.dimensions.empty())
      throw ValidationError(apath + ".dimensions: at least one dimension is required");
    std::set<std::string> dim_names;
    for (std::size_t d = 0; d < agent.dimensions.size(); ++d) {
      const DimensionSpec& dim = agent.dimensions[d];
      const std::string dpath = dim_path(a, d);
      if (dim.name.empty()) throw ValidationError(dpath + ".name: must be non-empty");
      if (!dim_names.insert(dim.name).second)
        throw ValidationError(dpath + ".name: duplicate dimension name '" + dim.name + "'");
      if (dim.cardinality < 2)
        throw ValidationError(dpath + ".cardinality: must be at least 2, got " +
                              std::to_string(dim.cardinality));
      if (dim.has_labels()) {
        if (dim.labels.size() != dim.cardinality)
          throw ValidationError(dpath + ".labels: expected " + std::to_string(dim.cardinality) +
                                " labels, got " + std::to_string(dim.labels.size()));
        std::set<std::string> seen(dim.labels.begin(), dim.labels.end());
        if (seen.size() != dim.labels.size())
          throw ValidationError(dpath + ".labels: labels must be unique");
      }
      offsets_[a].push_back(onehot_width_);
      onehot_width_ += dim.cardinality;
      ++num_dimensions_;
    }
  }
}

double JointSpace::agent_log10_cardinality(std::size_t agent) const {
  double s = 0.0;
  for (const auto& dim : agents_.at(agent).dimensions) s += std::log10(static_cast<double>(dim.cardinality));
  return s;
}

std::optional<std::uint64_t> JointSpace::agent_action_count(std::size_t agent) const {
  std::optional<std::uint64_t> n = 1;
  for (const auto& dim : agents_.at(agent).dimensions) n = checked_mul(n, dim.cardinality);
  return n;
}

std::optional<std::uint64_t> JointSpace::joint_action_count() const {
  std::optional<std::uint64_t> n = 1;
  for (const auto& agent : agents_)
    for (const auto& dim : agent.dimensions) n = checked_mul(n, dim.cardinality);
  return n;
}

std::vector<std::size_t> JointSpace::agent_unflatten(std::size_t agent, std::uint64_t flat) const {
  const auto& dims = agents_.at(agent).dimensions;
  std::vector<std::size_t> out(dims.size());
  for (std::size_t d = dims.size(); d-- > 0;) {
    out[d] = static_cast<std::size_t>(flat % dims[d].cardinality);
    flat /= dims[d].cardinality;
  }
  if (flat != 0) throw ValidationError("agent flat index out of range");
  return out;
}

std::uint64_t JointSpace::agent_flatten(std::size_t agent,
                                        const std::vector<std::size_t>& choice) const {
  const auto& dims = agents_.at(agent).dimensions;
  if (choice.size() != dims.size()) throw ShapeError("agent action has wrong number of dimensions");
  std::uint64_t flat = 0;
  for (std::size_t d = 0; d < dims.size(); ++d) flat = flat * dims[d].cardinality + choice[d];
  return flat;
}

JointAction JointSpace::joint_unflatten(std::uint64_t flat) const {
  JointAction action;
  action.choices.resize(agents_.size());
  for (std::size_t a = agents_.size(); a-- > 0;) {
    const auto& dims = agents_[a].dimensions;
    action.choices[a].resize(dims.size());
    for (std::size_t d = dims.size(); d-- > 0;) {
      action.choices[a][d] = static_cast<std::size_t>(flat % dims[d].cardinality);
      flat /= dims[d].cardinality;
    }
  }
  if (flat != 0) throw ValidationError("joint flat index out of range");
  return action;
}

std::uint64_t JointSpace::joint_flatten(const JointAction& action) const {
  std::uint64_t flat = 0;
  for (std::size_t a = 0; a < agents_.size(); ++a) {
    const auto& dims = agents_[a].dimensions;
    for (std::size_t d = 0; d < dims.size(); ++d) flat = flat * dims[d].cardinality + action.choices[a][d];
  }
  return flat;
}

std::string JointSpace::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(space_to_json(*this).dump())));
  return buf;
}

JointSpace parse_space_json(const nlohmann::json& config) {
  if (!config.is_object()) throw ValidationError("space config: top level must be an object");
  if (!config.contains("agents") || !config["agents"].is_array())
    throw ValidationError("agents: required list is missing");
  std::vector<AgentSpace> agents;
  const auto& jagents = config["agents"];
  for (std::size_t a = 0; a < jagents.size(); ++a) {
    const auto& ja = jagents[a];
    const std::string apath = "agents[" + std::to_string(a) + "]";
    if (!ja.is_object()) throw ValidationError(apath + ": must be an object");
    if (!ja.contains("name") || !ja["name"].is_string())
      throw ValidationError(apath + ".name: required string is missing");
    if (!ja.contains("dimensions") || !ja["dimensions"].is_array())
      throw ValidationError(apath + ".dimensions: required list is missing");
    AgentSpace agent{ja["name"].get<std::string>(), {}};
    const auto& jdims = ja["dimensions"];
    for (std::size_t d = 0; d < jdims.size(); ++d) {
      const auto& jd = jdims[d];
      const std::string dpath = dim_path(a, d);
      if (!jd.is_object()) throw ValidationError(dpath + ": must be an object");
      if (!jd.contains("name") || !jd["name"].is_string())
        throw ValidationError(dpath + ".name: required string is missing");
      DimensionSpec dim;
      dim.name = jd["name"].get<std::string>();
      if (jd.contains("labels")) {
        if (!jd["labels"].is_array()) throw ValidationError(dpath + ".labels: must be a list");
        for (const auto& l : jd["labels"]) dim.labels.push_back(label_text(l, dpath + ".labels"));
      }
      if (jd.contains("cardinality")) {
        const auto& jc = jd["cardinality"];
        if (!jc.is_number_integer() || jc.get<long long>() < 0)
          throw ValidationError(dpath + ".cardinality: must be a non-negative integer");
        dim.cardinality = jc.get<std::size_t>();
      } else if (dim.has_labels()) {
        dim.cardinality = dim.labels.size();
      } else {
        throw ValidationError(dpath + ".cardinality: required when labels are absent");
      }
      agent.dimensions.push_back(std::move(dim));
    }
    agents.push_back(std::move(agent));
  }
  return JointSpace(std::move(agents));
}

JointSpace parse_space(std::string_view config_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("space config: ") + e.what());
  }
  return parse_space_json(j);
}

JointSpace load_space(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open space config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_space(ss.str());
}

nlohmann::ordered_json space_to_json(const JointSpace& space) {
  nlohmann::ordered_json jagents = nlohmann::ordered_json::array();
  for (const auto& agent : space.agents()) {
    nlohmann::ordered_json jdims = nlohmann::ordered_json::array();
    for (const auto& dim : agent.dimensions) {
      nlohmann::ordered_json jd;
      jd["name"] = dim.name;
      jd["cardinality"] = dim.cardinality;
      if (dim.has_labels()) jd["labels"] = dim.labels;
      jdims.push_back(std::move(jd));
    }
    nlohmann::ordered_json ja;
    ja["name"] = agent.name;
    ja["dimensions"] = std::move(jdims);
    jagents.push_back(std::move(ja));
  }
  nlohmann::ordered_json out;
  out["agents"] = std::move(jagents);
  return out;
}

std::string serialize_space(const JointSpace& space) { return space_to_json(space).dump(2); }

double log10_cardinality(const JointSpace& space) {
  double s = 0.0;
  for (std::size_t a = 0; a < space.num_agents(); ++a) s += space.agent_log10_cardinality(a);
  return s;
}

void validate_action(const JointSpace& space, const JointAction& action) {
  if (action.choices.size() != space.num_agents())
    throw ShapeError("action has " + std::to_string(action.choices.size()) + " agents, space has " +
                     std::to_string(space.num_agents()));
  for (std::size_t a = 0; a < space.num_agents(); ++a) {
    const auto& dims = space.agent(a).dimensions;
    if (action.choices[a].size() != dims.size())
      throw ShapeError("action for agent '" + space.agent(a).name + "' has " +
                       std::to_string(action.choices[a].size()) + " dimensions, expected " +
                       std::to_string(dims.size()));
    for (std::size_t d = 0; d < dims.size(); ++d)
      if (action.choices[a][d] >= dims[d].cardinality)
        throw ValidationError("action index " + std::to_string(action.choices[a][d]) +
                              " out of range for " + space.agent(a).name + "." + dims[d].name);
  }
}

std::vector<double> encode_onehot(const JointSpace& space, const JointAction& action) {
  validate_action(space, action);
  std::vector<double> out(space.onehot_width(), 0.0);
  for (std::size_t a = 0; a < space.num_agents(); ++a)
    for (std::size_t d = 0; d < action.choices[a].size(); ++d)
      out[space.onehot_offset(a, d) + action.choices[a][d]] = 1.0;
  return out;
}

nlohmann::ordered_json decode_action(const JointSpace& space, const JointAction& action) {
  validate_action(space, action);
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (std::size_t a = 0; a < space.num_agents(); ++a) {
    const auto& agent = space.agent(a);
    nlohmann::ordered_json fields = nlohmann::ordered_json::object();
    for (std::size_t d = 0; d < agent.dimensions.size(); ++d) {
      const auto& dim = agent.dimensions[d];
      const std::size_t idx = action.choices[a][d];
      if (dim.has_labels())
        fields[dim.name] = dim.labels[idx];
      else
        fields[dim.name] = idx;
    }
    out[agent.name] = std::move(fields);
  }
  return out;
}

JointAction lookup_action(const JointSpace& space, const nlohmann::json& decoded) {
  if (!decoded.is_object()) throw ValidationError("decoded pipeline must be an object");
  JointAction action;
  action.choices.resize(space.num_agents());
  for (std::size_t a = 0; a < space.num_agents(); ++a) {
    const auto& agent = space.agent(a);
    if (!decoded.contains(agent.name) || !decoded[agent.name].is_object())
      throw ValidationError("decoded pipeline: missing agent '" + agent.name + "'");
    const auto& fields = decoded[agent.name];
    for (const auto& dim : agent.dimensions) {
      const std::string path = agent.name + "." + dim.name;
      if (!fields.contains(dim.name)) throw ValidationError(path + ": missing");
      const auto& v = fields[dim.name];
      std::size_t idx = dim.cardinality;
      if (v.is_string() && dim.has_labels()) {
        const auto s = v.get<std::string>();
        for (std::size_t k = 0; k < dim.labels.size(); ++k)
          if (dim.labels[k] == s) idx = k;
        if (idx == dim.cardinality) throw ValidationError(path + ": unknown label '" + s + "'");
      } else if (v.is_number_integer() && v.get<long long>() >= 0) {
        idx = v.get<std::size_t>();
      } else {
        throw ValidationError(path + ": expected a label or an index");
      }
      if (idx >= dim.cardinality) throw ValidationError(path + ": index out of range");
      action.choices[a].push_back(idx);
    }
  }
  return action;
}

std::string action_key(const JointAction& action) {
  std::string out;
  for (const auto& agent : action.choices)
    for (std::size_t idx : agent) {
      if (!out.empty()) out += ';';
      out += std::to_string(idx);
    }
  return out;
}

JointAction parse_action_key(const JointSpace& space, std::string_view key) {
  std::vector<std::size_t> flat;
  std::size_t pos = 0;
  while (pos <= key.size()) {
    const std::size_t next = std::min(key.find(';', pos), key.size());
    const std::string token(key.substr(pos, next - pos));
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (token.empty() || used != token.size())
      throw ParseError("action key: bad index '" + token + "'");
    flat.push_back(static_cast<std::size_t>(v));
    pos = next + 1;
  }
  if (flat.size() != space.num_dimensions())
    throw ShapeError("action key has " + std::to_string(flat.size()) + " indices, expected " +
                     std::to_string(space.num_dimensions()));
  JointAction action;
  std::size_t k = 0;
  for (const auto& agent : space.agents()) {
    action.choices.emplace_back(flat.begin() + k, flat.begin() + k + agent.dimensions.size());
    k += agent.dimensions.size();
  }
  validate_action(space, action);
  return action;
}

nlohmann::json action_to_json(const JointAction& action) { return action.choices; }

JointAction action_from_json(const nlohmann::json& j) {
  return JointAction{j.get<std::vector<std::vector<std::size_t>>>()};
}

}  // namespace ma2ml
