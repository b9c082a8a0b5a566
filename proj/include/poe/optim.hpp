#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "poe/diffcore.hpp"

namespace poe {

struct OptimizerConfig {
  enum class Kind : std::uint8_t { sgd, adam };
  Kind kind = Kind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

inline const char* to_string(OptimizerConfig::Kind k) { return k == OptimizerConfig::Kind::sgd ? "sgd" : "adam"; }

inline OptimizerConfig::Kind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerConfig::Kind::sgd;
  if (s == "adam") return OptimizerConfig::Kind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

// First-order optimizer over a fixed list of parameter tensors.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const std::vector<diff::Tensor>& params) : cfg_(cfg) {
    if (cfg_.kind == OptimizerConfig::Kind::adam) {
      for (const auto& p : params) {
        m_.emplace_back(p.shape(), 0.0);
        v_.emplace_back(p.shape(), 0.0);
      }
    }
  }

  void step(std::vector<diff::Tensor>& params, const std::vector<diff::Tensor>& grads, double lr) {
    if (grads.size() != params.size()) throw std::invalid_argument("Optimizer::step: gradient count mismatch");
    if (cfg_.kind == OptimizerConfig::Kind::sgd) {
      for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k].size(); ++i) params[k][i] -= lr * grads[k][i];
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<diff::Tensor> m_;
  std::vector<diff::Tensor> v_;
  std::uint64_t t_ = 0;
};

}  // namespace poe
