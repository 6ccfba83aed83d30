#ifndef MILSEG_OPTIMIZER_HPP
#define MILSEG_OPTIMIZER_HPP

#include "milseg/layers.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace milseg {

struct OptimizerConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.00005;
  double decay_factor = 0.8;
  std::int64_t decay_interval = 50000;  // examples seen between decays

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw std::invalid_argument("decay_factor must lie in (0, 1]");
    if (decay_interval <= 0) throw std::invalid_argument("decay_interval must be positive");
  }
};

/// Step-decayed learning rate after `examples_seen` training examples.
inline double effective_learning_rate(const OptimizerConfig& cfg, std::int64_t examples_seen) {
  return cfg.learning_rate * std::pow(cfg.decay_factor, static_cast<double>(examples_seen / cfg.decay_interval));
}

/// One momentum step on a single layer:
///   v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v
/// Weight decay touches weights only. Frozen layers come back unchanged.
template <typename Scalar>
LayerParams<Scalar> sgd_step(LayerParams<Scalar> p, const LayerGrads<Scalar>& g, const OptimizerConfig& cfg,
                             double lr) {
  if (g.weights.shape() != p.weights.shape() || g.bias.shape() != p.bias.shape()) {
    throw ShapeError("sgd_step: gradient shapes do not mirror parameters");
  }
  if (p.frozen) return p;
  const auto m = Scalar(cfg.momentum), rate = Scalar(lr), decay = Scalar(cfg.weight_decay);
  p.weights_velocity.values() = m * p.weights_velocity.values() - rate * (g.weights.values() + decay * p.weights.values());
  p.bias_velocity.values() = m * p.bias_velocity.values() - rate * g.bias.values();
  p.weights.values() += p.weights_velocity.values();
  p.bias.values() += p.bias_velocity.values();
  return p;
}

template <typename Scalar>
std::vector<LayerParams<Scalar>> sgd_step(std::vector<LayerParams<Scalar>> params,
                                          const std::vector<LayerGrads<Scalar>>& grads, const OptimizerConfig& cfg,
                                          double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: layer count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = sgd_step(std::move(params[i]), grads[i], cfg, lr);
  return params;
}

}  // namespace milseg

#endif  // MILSEG_OPTIMIZER_HPP
