#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ma2ml {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// First-order step rule over a flat parameter vector. Sgd is stateless;
/// Adam keeps bias-corrected moment estimates (beta1 0.9, beta2 0.999).
class ParamOptimizer {
 public:
  explicit ParamOptimizer(OptimizerKind kind = OptimizerKind::Sgd) : kind_(kind) {}

  OptimizerKind kind() const { return kind_; }

  /// params -= lr * direction(grad). Pass the negated gradient to ascend.
  void descend(std::span<double> params, std::span<const double> grad, double lr);

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  OptimizerKind kind_;
  std::vector<double> m_, v_;
  std::uint64_t steps_ = 0;
};

}  // namespace ma2ml
