#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>

#include "rnac/error.hpp"
#include "rnac/rng.hpp"
#include "rnac/tape.hpp"
#include "rnac/tensor.hpp"

namespace rnac {

// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) initialization for both the
// weight matrix and its bias.
inline Tensor init_weight(std::size_t out, std::size_t in, Rng& rng) {
  Tensor w({out, in});
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  return w;
}

inline Tensor init_bias(std::size_t out, std::size_t fan_in, Rng& rng) {
  Tensor b({out});
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& v : b.values()) v = rng.uniform(-bound, bound);
  return b;
}

inline double global_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

// Rescales all gradients together when their joint L2 norm exceeds max_norm.
inline void clip_global_norm(GradMap& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw UsageError("clip_global_norm: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm <= max_norm) return;
  const double factor = max_norm / norm;
  for (auto& [name, g] : grads)
    for (double& v : g.values()) v *= factor;
}

// RMSProp with a single squared-gradient running average per parameter. In
// asynchronous training the statistics live in the global store and are
// shared by all workers.
struct OptimizerState {
  std::map<std::string, Tensor> mean_square;
  double rho = 0.99;
  double epsilon = 0.1;
  double learning_rate = 1e-4;

  static OptimizerState create(const ParameterStore& params, double rho,
                               double epsilon, double learning_rate) {
    OptimizerState s;
    s.rho = rho;
    s.epsilon = epsilon;
    s.learning_rate = learning_rate;
    for (const auto& [name, p] : params)
      s.mean_square[name] = Tensor::zeros(p.shape());
    return s;
  }
};

inline void rmsprop_update(ParameterStore& params, const GradMap& grads,
                           OptimizerState& opt) {
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    auto mit = opt.mean_square.find(name);
    if (pit == params.end() || mit == opt.mean_square.end())
      throw UsageError("rmsprop_update: unknown parameter " + name);
    Tensor& p = pit->second;
    Tensor& ms = mit->second;
    if (!p.same_shape(g) || !ms.same_shape(g))
      throw ShapeError("rmsprop_update: shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      ms[i] = opt.rho * ms[i] + (1.0 - opt.rho) * g[i] * g[i];
      p[i] -= opt.learning_rate * g[i] / std::sqrt(ms[i] + opt.epsilon);
    }
    p.check_finite("rmsprop parameter " + name);
  }
}

}  // namespace rnac
