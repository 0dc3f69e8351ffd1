#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "clab/models.hpp"

namespace clab {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 penalty added to the gradient before the update.
  double weight_decay = 0.0;
};

struct OptimizerState {
  std::map<std::string, std::vector<double>> first;   // velocity (SGD) or first moment (Adam)
  std::map<std::string, std::vector<double>> second;  // Adam second moment
  std::size_t steps = 0;
};

/// One update of every parameter from its accumulated grad buffer.
///   sgd-momentum: v <- m v + g;  w <- w - lr v
///   adam:         bias-corrected first/second moments
inline void optimizer_step(const OptimizerConfig& cfg, OptimizerState& state, ParamMap& params) {
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  for (auto& [name, w] : params) {
    if (!w.requires_grad()) continue;
    auto g = w.grad();
    auto& m = state.first[name];
    if (m.empty()) m.assign(w.size(), 0.0);
    if (cfg.kind == OptimizerKind::SgdMomentum) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + cfg.weight_decay * w[i];
        m[i] = cfg.momentum * m[i] + gi;
        w[i] -= cfg.lr * m[i];
      }
    } else {
      auto& v = state.second[name];
      if (v.empty()) v.assign(w.size(), 0.0);
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + cfg.weight_decay * w[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
      }
    }
  }
}

inline void zero_grads(ParamMap& params) {
  for (auto& [_, t] : params) t.zero_grad();
}

}  // namespace clab
