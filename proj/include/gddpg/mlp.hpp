#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gddpg/errors.hpp"

namespace gddpg {

enum class Activation : std::uint8_t { identity = 0, tanh = 1, relu = 2 };

std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense feedforward network. Weight `t` maps layer `t` to layer `t + 1`
/// and has shape `layer_sizes[t + 1] x layer_sizes[t]`.
template <typename Scalar>
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Activation> hidden_activations;  // one per hidden layer
  Activation output_activation = Activation::identity;
  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }

  Activation activation(int layer) const {
    return layer + 1 == num_layers() ? output_activation : hidden_activations[layer];
  }

  Eigen::Index num_parameters() const {
    Eigen::Index n = 0;
    for (int t = 0; t < num_layers(); ++t) n += weights[t].size() + biases[t].size();
    return n;
  }

  bool all_finite() const {
    for (int t = 0; t < num_layers(); ++t) {
      if (!weights[t].allFinite() || !biases[t].allFinite()) return false;
    }
    return true;
  }

  bool same_shape(const MlpParams& other) const {
    return layer_sizes == other.layer_sizes && hidden_activations == other.hidden_activations &&
           output_activation == other.output_activation;
  }
};

/// Parameter-shaped container used for gradients and optimizer moments.
template <typename Scalar>
struct MlpGradients {
  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;

  static MlpGradients zeros_like(const MlpParams<Scalar>& params) {
    MlpGradients g;
    for (int t = 0; t < params.num_layers(); ++t) {
      g.weights.push_back(MatrixX<Scalar>::Zero(params.weights[t].rows(), params.weights[t].cols()));
      g.biases.push_back(VectorX<Scalar>::Zero(params.biases[t].size()));
    }
    return g;
  }

  MlpGradients& operator+=(const MlpGradients& other) {
    for (std::size_t t = 0; t < weights.size(); ++t) {
      weights[t] += other.weights[t];
      biases[t] += other.biases[t];
    }
    return *this;
  }

  bool all_finite() const {
    for (std::size_t t = 0; t < weights.size(); ++t) {
      if (!weights[t].allFinite() || !biases[t].allFinite()) return false;
    }
    return true;
  }

  /// Concatenation of every entry, weights row-major then bias, per layer.
  VectorX<Scalar> flatten() const {
    Eigen::Index n = 0;
    for (std::size_t t = 0; t < weights.size(); ++t) n += weights[t].size() + biases[t].size();
    VectorX<Scalar> out(n);
    Eigen::Index at = 0;
    for (std::size_t t = 0; t < weights.size(); ++t) {
      for (Eigen::Index r = 0; r < weights[t].rows(); ++r) {
        for (Eigen::Index c = 0; c < weights[t].cols(); ++c) out(at++) = weights[t](r, c);
      }
      for (Eigen::Index r = 0; r < biases[t].size(); ++r) out(at++) = biases[t](r);
    }
    return out;
  }
};

/// Layer outputs recorded by a batched forward pass; `layers[0]` is the input.
template <typename Scalar>
struct MlpTape {
  std::vector<MatrixX<Scalar>> layers;
  const MatrixX<Scalar>& output() const { return layers.back(); }
};

template <typename Scalar>
struct MlpBackward {
  MlpGradients<Scalar> gradients;
  MatrixX<Scalar> input_gradient;  // one column per sample
};

namespace detail {

template <typename Scalar, typename Derived>
void apply_activation(Activation activation, Eigen::MatrixBase<Derived>& z) {
  switch (activation) {
    case Activation::identity:
      break;
    case Activation::tanh:
      // Eigen has no vectorized tanh for double; the exp form is an order of
      // magnitude faster and saturates correctly (exp overflow gives +-1).
      z = (Scalar(1) - Scalar(2) / ((Scalar(2) * z.array()).exp() + Scalar(1))).matrix();
      break;
    case Activation::relu:
      z = z.array().max(Scalar(0)).matrix();
      break;
  }
}

// Multiplies `grad` in place by the activation derivative, expressed through
// the activation output `y`.
template <typename Scalar>
void activation_backward(Activation activation, const MatrixX<Scalar>& y, MatrixX<Scalar>& grad) {
  switch (activation) {
    case Activation::identity:
      break;
    case Activation::tanh:
      grad.array() *= (Scalar(1) - y.array().square());
      break;
    case Activation::relu:
      grad.array() *= (y.array() > Scalar(0)).template cast<Scalar>();
      break;
  }
}

}  // namespace detail

/// Uniform Glorot initialization, zero biases. The generator is seeded from
/// `seed` only, so identical arguments give bitwise-identical parameters.
template <typename Scalar>
MlpParams<Scalar> mlp_init(const std::vector<int>& layer_sizes, Activation hidden_activation,
                           Activation output_activation, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw ConfigError("mlp_init: need at least input and output sizes");
  for (int size : layer_sizes) {
    if (size < 1) throw ConfigError("mlp_init: layer sizes must be positive");
  }
  MlpParams<Scalar> params;
  params.layer_sizes = layer_sizes;
  params.hidden_activations.assign(layer_sizes.size() - 2, hidden_activation);
  params.output_activation = output_activation;

  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t + 1 < layer_sizes.size(); ++t) {
    const int fan_in = layer_sizes[t];
    const int fan_out = layer_sizes[t + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    MatrixX<Scalar> w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) w(r, c) = static_cast<Scalar>(uniform(rng));
    }
    params.weights.push_back(std::move(w));
    params.biases.push_back(VectorX<Scalar>::Zero(fan_out));
  }
  return params;
}

/// Batched forward pass; each column of `inputs` is one sample.
template <typename Scalar>
MlpTape<Scalar> mlp_forward_tape(const MlpParams<Scalar>& params, const MatrixX<Scalar>& inputs) {
  if (inputs.rows() != params.input_size()) {
    throw ShapeError("mlp_forward: input has " + std::to_string(inputs.rows()) + " rows, expected " +
                     std::to_string(params.input_size()));
  }
  MlpTape<Scalar> tape;
  tape.layers.reserve(params.num_layers() + 1);
  tape.layers.push_back(inputs);
  for (int t = 0; t < params.num_layers(); ++t) {
    MatrixX<Scalar> z = params.weights[t] * tape.layers.back();
    z.colwise() += params.biases[t];
    detail::apply_activation<Scalar>(params.activation(t), z);
    tape.layers.push_back(std::move(z));
  }
  return tape;
}

template <typename Scalar>
MatrixX<Scalar> mlp_forward(const MlpParams<Scalar>& params, const MatrixX<Scalar>& inputs) {
  return std::move(mlp_forward_tape(params, inputs).layers.back());
}

template <typename Scalar>
VectorX<Scalar> mlp_forward(const MlpParams<Scalar>& params, const VectorX<Scalar>& input) {
  return mlp_forward(params, MatrixX<Scalar>(input)).col(0);
}

/// Reverse pass for a scalar loss whose gradient with respect to the network
/// output is `output_gradient` (same shape as the taped output).
template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const MlpParams<Scalar>& params, const MlpTape<Scalar>& tape,
                                 const MatrixX<Scalar>& output_gradient) {
  const auto& out = tape.output();
  if (output_gradient.rows() != out.rows() || output_gradient.cols() != out.cols()) {
    throw ShapeError("mlp_backward: output gradient shape does not match forward output");
  }
  MlpBackward<Scalar> result;
  result.gradients.weights.resize(params.num_layers());
  result.gradients.biases.resize(params.num_layers());
  MatrixX<Scalar> delta = output_gradient;
  for (int t = params.num_layers() - 1; t >= 0; --t) {
    detail::activation_backward<Scalar>(params.activation(t), tape.layers[t + 1], delta);
    result.gradients.weights[t].noalias() = delta * tape.layers[t].transpose();
    result.gradients.biases[t] = delta.rowwise().sum();
    MatrixX<Scalar> upstream = params.weights[t].transpose() * delta;
    delta = std::move(upstream);
  }
  result.input_gradient = std::move(delta);
  return result;
}

template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const MlpParams<Scalar>& params, const VectorX<Scalar>& input,
                                 const VectorX<Scalar>& output_gradient) {
  const auto tape = mlp_forward_tape(params, MatrixX<Scalar>(input));
  return mlp_backward(params, tape, MatrixX<Scalar>(output_gradient));
}

/// Jacobian of the network output with respect to its input at `input`.
template <typename Scalar>
MatrixX<Scalar> mlp_input_jacobian(const MlpParams<Scalar>& params, const VectorX<Scalar>& input) {
  const auto tape = mlp_forward_tape(params, MatrixX<Scalar>(input));
  MatrixX<Scalar> jac(params.output_size(), params.input_size());
  for (int i = 0; i < params.output_size(); ++i) {
    MatrixX<Scalar> seed = MatrixX<Scalar>::Zero(params.output_size(), 1);
    seed(i, 0) = Scalar(1);
    jac.row(i) = mlp_backward(params, tape, seed).input_gradient.col(0).transpose();
  }
  return jac;
}

template <typename Scalar>
struct AdamConfig {
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
};

template <typename Scalar>
struct AdamState {
  AdamConfig<Scalar> config;
  MlpGradients<Scalar> first_moment;
  MlpGradients<Scalar> second_moment;
  long step_count = 0;

  static AdamState for_params(const MlpParams<Scalar>& params, AdamConfig<Scalar> config) {
    if (!(config.learning_rate > 0)) throw ConfigError("adam: learning rate must be positive");
    if (!(config.beta1 > 0 && config.beta1 < 1 && config.beta2 > 0 && config.beta2 < 1)) {
      throw ConfigError("adam: decay rates must lie in (0, 1)");
    }
    AdamState state;
    state.config = config;
    state.first_moment = MlpGradients<Scalar>::zeros_like(params);
    state.second_moment = MlpGradients<Scalar>::zeros_like(params);
    return state;
  }
};

/// Bias-corrected adaptive-moment descent step. Non-finite gradients are
/// rejected before anything is modified.
template <typename Scalar>
std::pair<MlpParams<Scalar>, AdamState<Scalar>> adam_step(const AdamState<Scalar>& state,
                                                         const MlpParams<Scalar>& params,
                                                         const MlpGradients<Scalar>& grads) {
  if (grads.weights.size() != params.weights.size() ||
      state.first_moment.weights.size() != params.weights.size()) {
    throw ShapeError("adam_step: gradient/parameter layer count mismatch");
  }
  for (int t = 0; t < params.num_layers(); ++t) {
    if (grads.weights[t].rows() != params.weights[t].rows() ||
        grads.weights[t].cols() != params.weights[t].cols() ||
        grads.biases[t].size() != params.biases[t].size()) {
      throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(t));
    }
  }
  if (!grads.all_finite()) throw NumericalError("adam_step: non-finite gradient");

  const auto& cfg = state.config;
  AdamState<Scalar> next = state;
  MlpParams<Scalar> updated = params;
  next.step_count = state.step_count + 1;
  const Scalar correction1 = Scalar(1) - std::pow(cfg.beta1, static_cast<Scalar>(next.step_count));
  const Scalar correction2 = Scalar(1) - std::pow(cfg.beta2, static_cast<Scalar>(next.step_count));
  const Scalar step = cfg.learning_rate / correction1;
  const Scalar root2 = std::sqrt(correction2);

  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = cfg.beta1 * m + (Scalar(1) - cfg.beta1) * g;
    v = cfg.beta2 * v + (Scalar(1) - cfg.beta2) * g.cwiseAbs2();
    p.array() -= step * m.array() / (v.array().sqrt() / root2 + cfg.epsilon);
  };
  for (int t = 0; t < params.num_layers(); ++t) {
    update(updated.weights[t], next.first_moment.weights[t], next.second_moment.weights[t],
           grads.weights[t]);
    update(updated.biases[t], next.first_moment.biases[t], next.second_moment.biases[t],
           grads.biases[t]);
  }
  return {std::move(updated), std::move(next)};
}

/// p_target <- rate * p_source + (1 - rate) * p_target, elementwise.
template <typename Scalar>
MlpParams<Scalar> soft_update(const MlpParams<Scalar>& target, const MlpParams<Scalar>& source,
                              Scalar rate) {
  if (!(rate > Scalar(0) && rate <= Scalar(1))) {
    throw ConfigError("soft_update: rate must lie in (0, 1]");
  }
  if (!target.same_shape(source)) throw ShapeError("soft_update: target/source shape mismatch");
  if (rate == Scalar(1)) return source;
  MlpParams<Scalar> out = target;
  for (int t = 0; t < target.num_layers(); ++t) {
    out.weights[t] = rate * source.weights[t] + (Scalar(1) - rate) * target.weights[t];
    out.biases[t] = rate * source.biases[t] + (Scalar(1) - rate) * target.biases[t];
  }
  return out;
}

using Mlp = MlpParams<double>;
using MlpGrad = MlpGradients<double>;
using Adam = AdamState<double>;

// Versioned binary checkpoint: magic, version, layer sizes, activations,
// then row-major float64 weights and biases per layer. Round trips are
// bit-exact.
void write_mlp(std::ostream& out, const Mlp& params);
Mlp read_mlp(std::istream& in);

}  // namespace gddpg
