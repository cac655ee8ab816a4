#include "ma2ml/config.hpp"

#include <fstream>
#include <sstream>

#include "ma2ml/error.hpp"
#include "ma2ml/rng.hpp"

namespace ma2ml {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

json read_json_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + what + " '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

OracleConfig parse_oracle(const json& j, const fs::path& base_dir) {
  OracleConfig o;
  if (j.is_string()) {
    RunConfig tmp;
    apply_oracle_spec(tmp, j.get<std::string>());
    o = tmp.oracle;
    if (o.kind == "tabular" && fs::path(o.path).is_relative()) o.path = (base_dir / o.path).lexically_normal().string();
    return o;
  }
  if (!j.is_object()) throw ConfigError("oracle must be a string or an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") o.kind = field<std::string>(j, "kind", "oracle");
    else if (key == "seed") o.seed = field<std::uint64_t>(j, "seed", "oracle");
    else if (key == "coupling") o.coupling = field<double>(j, "coupling", "oracle");
    else if (key == "buckets") o.buckets = field<std::size_t>(j, "buckets", "oracle");
    else if (key == "noise") o.noise = field<double>(j, "noise", "oracle");
    else if (key == "path") o.path = field<std::string>(j, "path", "oracle");
    else if (key == "command") o.command = field<std::string>(j, "command", "oracle");
    else if (key == "timeout_seconds") o.timeout_seconds = field<double>(j, "timeout_seconds", "oracle");
    else if (key == "max_concurrent") o.max_concurrent = field<std::size_t>(j, "max_concurrent", "oracle");
    else throw ConfigError("unknown key oracle." + key);
  }
  if (o.kind != "separable" && o.kind != "coupled" && o.kind != "tabular" && o.kind != "exec")
    throw ConfigError("oracle.kind must be separable, coupled, tabular or exec (got '" + o.kind + "')");
  if (o.kind == "tabular") {
    if (o.path.empty()) throw ConfigError("oracle.path is required for a tabular oracle");
    if (fs::path(o.path).is_relative()) o.path = (base_dir / o.path).lexically_normal().string();
  }
  if (o.kind == "exec" && o.command.empty()) throw ConfigError("oracle.command is required for an exec oracle");
  if (!(o.coupling >= 0.0 && o.coupling <= 1.0)) throw ConfigError("oracle.coupling must be in [0, 1]");
  if (o.buckets < 1) throw ConfigError("oracle.buckets must be >= 1");
  if (!(o.noise >= 0.0)) throw ConfigError("oracle.noise must be >= 0");
  if (!(o.timeout_seconds > 0.0)) throw ConfigError("oracle.timeout_seconds must be > 0");
  if (o.max_concurrent < 1) throw ConfigError("oracle.max_concurrent must be >= 1");
  return o;
}

ordered_json oracle_to_json(const OracleConfig& o) {
  ordered_json j;
  j["kind"] = o.kind;
  if (o.seed) j["seed"] = *o.seed;
  if (o.kind == "separable" || o.kind == "coupled") {
    j["coupling"] = o.coupling;
    j["buckets"] = o.buckets;
    j["noise"] = o.noise;
  }
  if (o.kind == "tabular") j["path"] = o.path;
  if (o.kind == "exec") {
    j["command"] = o.command;
    j["timeout_seconds"] = o.timeout_seconds;
    j["max_concurrent"] = o.max_concurrent;
  }
  return j;
}

}  // namespace

JointSpace RunConfig::joint_space() const { return parse_space_json(json(space)); }

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  bool have_space = false;
  for (const auto& [key, v] : doc.items()) {
    if (key == "space_ref") {
      const fs::path ref = field<std::string>(doc, "space_ref", "config");
      const fs::path full = ref.is_relative() ? base_dir / ref : ref;
      c.space = ordered_json::parse(read_json_file(full, "space").dump());
      have_space = true;
    } else if (key == "space") {
      c.space = ordered_json::parse(v.dump());
      have_space = true;
    } else if (key == "oracle") {
      c.oracle = parse_oracle(v, base_dir);
    } else if (key == "variant") {
      c.variant = parse_variant(field<std::string>(doc, "variant", "config"));
    } else if (key == "hyperparams") {
      c.hyper = Hyperparams::from_json(v);
    } else if (key == "objective") {
      if (v.is_null()) continue;
      if (!v.is_object()) throw ConfigError("objective must be an object");
      MultiObjectiveSpec m;
      for (const auto& [k, x] : v.items()) {
        if (k == "w") m.w = field<double>(v, "w", "objective");
        else if (k == "flops_constraint") m.constraint = field<double>(v, "flops_constraint", "objective");
        else throw ConfigError("unknown key objective." + k);
      }
      c.objective = m;
    } else if (key == "logging") {
      if (!v.is_object()) throw ConfigError("logging must be an object");
      for (const auto& [k, x] : v.items()) {
        if (k == "out_dir") c.out_dir = field<std::string>(v, "out_dir", "logging");
        else throw ConfigError("unknown key logging." + k);
      }
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = field<std::size_t>(doc, "checkpoint_every", "config");
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (!have_space) throw ConfigError("config needs 'space_ref' or 'space'");
  try {
    c.joint_space();
    c.hyper.validate();
    if (c.objective) c.objective->validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  const json doc = read_json_file(path, "config");
  return parse_run_config(doc, path.parent_path());
}

ordered_json run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["space"] = c.space;
  j["oracle"] = oracle_to_json(c.oracle);
  j["variant"] = to_string(c.variant);
  j["hyperparams"] = ordered_json::parse(c.hyper.to_json().dump());
  if (c.objective) j["objective"] = {{"w", c.objective->w}, {"flops_constraint", c.objective->constraint}};
  j["logging"] = {{"out_dir", c.out_dir.string()}};
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

std::string config_hash(const RunConfig& c) {
  ordered_json j = run_config_to_json(c);
  j.erase("logging");
  j.erase("checkpoint_every");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

void apply_oracle_spec(RunConfig& c, const std::string& spec) {
  OracleConfig o = c.oracle;
  if (spec == "separable" || spec == "coupled") {
    o.kind = spec;
  } else if (spec.rfind("tabular:", 0) == 0) {
    o.kind = "tabular";
    o.path = spec.substr(8);
    if (o.path.empty()) throw ConfigError("--oracle tabular:PATH needs a path");
  } else if (spec.rfind("exec:", 0) == 0) {
    o.kind = "exec";
    o.command = spec.substr(5);
    if (o.command.empty()) throw ConfigError("--oracle exec:CMD needs a command");
  } else {
    throw ConfigError("oracle must be separable, coupled, tabular:PATH or exec:CMD (got '" + spec + "')");
  }
  c.oracle = o;
}

std::uint64_t oracle_seed(const RunConfig& c) {
  return c.oracle.seed ? *c.oracle.seed : derive_seed(c.hyper.seed, "oracle");
}

std::shared_ptr<const RewardOracle> make_oracle(const RunConfig& c, const JointSpace& space) {
  const OracleConfig& o = c.oracle;
  try {
    if (o.kind == "separable")
      return std::make_shared<SyntheticOracle>(space, oracle_seed(c), 0.0, o.buckets, o.noise);
    if (o.kind == "coupled")
      return std::make_shared<SyntheticOracle>(space, oracle_seed(c), o.coupling, o.buckets, o.noise);
    if (o.kind == "tabular") return std::make_shared<TabularOracle>(TabularOracle::load(o.path, space));
    if (o.kind == "exec")
      return std::make_shared<ExternalCommandOracle>(space, o.command, o.timeout_seconds, o.max_concurrent);
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("oracle: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("oracle: ") + e.what());
  }
  throw ConfigError("unknown oracle kind '" + o.kind + "'");
}

}  // namespace ma2ml
