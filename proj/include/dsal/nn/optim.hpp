#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsal/error.hpp"

namespace dsal::nn {

enum class OptimizerKind { adam, sgd };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

/// Adam (bias-corrected moments) or plain SGD over a flat parameter vector.
template <class T>
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::size_t n) : cfg_(cfg) {
    if (cfg_.kind == OptimizerKind::adam) {
      m_.assign(n, T(0));
      v_.assign(n, T(0));
    }
  }

  void step(std::span<T> params, std::span<const T> grads) {
    ++t_;
    const T lr = static_cast<T>(cfg_.learning_rate);
    if (cfg_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
      return;
    }
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_))));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_))));
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grads[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
      params[i] -= lr * (m_[i] * c1) / (std::sqrt(v_[i] * c2) + eps);
    }
  }

  std::size_t steps() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<T> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace dsal::nn
