#include "ma2ml/optimizer.hpp"

#include <cmath>

#include "ma2ml/error.hpp"

namespace ma2ml {

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

void ParamOptimizer::descend(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != grad.size()) throw ShapeError("optimizer: gradient size mismatch");
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grad[k];
    return;
  }
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    steps_ = 0;
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m_[k] = kBeta1 * m_[k] + (1.0 - kBeta1) * grad[k];
    v_[k] = kBeta2 * v_[k] + (1.0 - kBeta2) * grad[k] * grad[k];
    params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + kEps);
  }
}

nlohmann::json ParamOptimizer::to_json() const {
  return {{"kind", to_string(kind_)}, {"m", m_}, {"v", v_}, {"steps", steps_}};
}

void ParamOptimizer::load_json(const nlohmann::json& j) {
  kind_ = parse_optimizer(j.at("kind").get<std::string>());
  m_ = j.at("m").get<std::vector<double>>();
  v_ = j.at("v").get<std::vector<double>>();
  steps_ = j.at("steps").get<std::uint64_t>();
}

}  // namespace ma2ml
