#pragma once

#include <vector>

#include "bam/errors.hpp"
#include "bam/matrix.hpp"
#include "bam/model.hpp"

namespace bam {

// Gradients of the batch loss w.r.t. every parameter matrix, shape-matched
// to ModelParams (weights[l] and biases[l] mirror the model layout).
struct GradientSet {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};

inline GradientSet zero_gradients(const ModelParams& model) {
  GradientSet g;
  for (int l = 0; l < model.n_layers(); ++l) {
    g.weights.emplace_back(model.weights[l].rows, model.weights[l].cols);
    g.biases.emplace_back(model.biases[l].rows, model.biases[l].cols);
  }
  return g;
}

// SGD with momentum and decoupled (additive) weight decay:
//   v     <- momentum * v + (grad + weight_decay * param)
//   param <- param - lr * v
// The decay term only enters the update; logged losses stay plain
// cross-entropy without the l2 penalty.
struct OptimizerState {
  double learning_rate = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<Matrix> weight_velocity;
  std::vector<Matrix> bias_velocity;
};

inline OptimizerState make_optimizer(const ModelParams& model, double learning_rate,
                                     double momentum, double weight_decay) {
  if (learning_rate <= 0.0) throw std::invalid_argument("make_optimizer: learning_rate <= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("make_optimizer: momentum outside [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("make_optimizer: negative weight_decay");
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (int l = 0; l < model.n_layers(); ++l) {
    s.weight_velocity.emplace_back(model.weights[l].rows, model.weights[l].cols);
    s.bias_velocity.emplace_back(model.biases[l].rows, model.biases[l].cols);
  }
  return s;
}

namespace detail {

inline void sgd_update(Matrix& param, const Matrix& grad, Matrix& velocity,
                       const OptimizerState& s) {
  if (!param.same_shape(grad) || !param.same_shape(velocity))
    throw std::invalid_argument("sgd_step: shape mismatch");
  for (std::size_t i = 0; i < param.v.size(); ++i) {
    velocity.v[i] = s.momentum * velocity.v[i] + (grad.v[i] + s.weight_decay * param.v[i]);
    param.v[i] -= s.learning_rate * velocity.v[i];
  }
}

}  // namespace detail

inline void sgd_step(ModelParams& model, const GradientSet& grads, OptimizerState& state) {
  if (grads.weights.size() != model.weights.size() || grads.biases.size() != model.biases.size())
    throw std::invalid_argument("sgd_step: gradient layer count mismatch");
  for (int l = 0; l < model.n_layers(); ++l) {
    detail::sgd_update(model.weights[l], grads.weights[l], state.weight_velocity[l], state);
    detail::sgd_update(model.biases[l], grads.biases[l], state.bias_velocity[l], state);
  }
  for (int l = 0; l < model.n_layers(); ++l)
    if (!model.weights[l].all_finite() || !model.biases[l].all_finite())
      throw NumericError("sgd_step: non-finite parameter after update (layer " +
                         std::to_string(l) + ")");
}

}  // namespace bam
