#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"

namespace despeckle {

/// One velocity array per parameter array, in the parameter enumeration order.
struct OptimizerState {
  std::vector<std::vector<double>> velocity;

  static OptimizerState zeros_like(const std::vector<std::span<double>>& params) {
    OptimizerState s;
    s.velocity.reserve(params.size());
    for (const auto& p : params) s.velocity.emplace_back(p.size(), 0.0);
    return s;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Heavy-ball SGD: v <- mu * v - eta * g; p <- p + v, for every array.
inline void sgd_momentum_step(const std::vector<std::span<double>>& params,
                              const std::vector<std::vector<double>>& grads, OptimizerState& opt,
                              double eta, double mu) {
  if (!(eta > 0.0)) throw ConfigError("sgd: learning rate must be > 0");
  if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
  if (grads.size() != params.size() || opt.velocity.size() != params.size())
    throw ShapeError("sgd: parameter, gradient and velocity array counts differ");
  for (std::size_t a = 0; a < params.size(); ++a) {
    if (grads[a].size() != params[a].size() || opt.velocity[a].size() != params[a].size())
      throw ShapeError("sgd: array " + std::to_string(a) + " has mismatched lengths");
  }
  for (std::size_t a = 0; a < params.size(); ++a) {
    auto& v = opt.velocity[a];
    const auto& g = grads[a];
    auto p = params[a];
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] - eta * g[i];
      p[i] = p[i] + v[i];
    }
  }
}

}  // namespace despeckle
