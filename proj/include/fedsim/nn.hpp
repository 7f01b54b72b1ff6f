#pragma once

// Minimal MLP substrate: flat parameter vectors, forward/backward passes,
// classification losses and plain SGD. Hidden layers use ReLU; the output
// layer produces logits that are turned into class probabilities by softmax.

#include <cstddef>
#include <span>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

/// All model weights in one flat vector. Layer l occupies a weight block
/// (fan_out x fan_in, row-major) followed by its fan_out biases.
using ParamVector = std::vector<double>;

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

struct ModelSpec {
  /// Input dim, hidden dims..., number of classes.
  std::vector<std::size_t> layer_dims;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.back(); }
  std::size_t num_layers() const { return layer_dims.size() - 1; }
  std::size_t param_count() const;

  /// Throws ConfigError unless there are >= 2 positive dims and >= 2 classes.
  void validate() const;
};

struct Batch {
  Matrix features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

enum class LossKind { cross_entropy, mse_onehot };

inline constexpr double kProbFloor = 1e-12;

/// Glorot-uniform weights, zero biases.
ParamVector init_params(const ModelSpec& spec, Rng& rng);

Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& features);

std::vector<double> softmax(std::span<const double> logits);
Matrix softmax_rows(const Matrix& logits);

/// sum_i p_i log(p_i / max(q_i, 1e-12)), with 0 log 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

double cross_entropy(const Matrix& probs, std::span<const std::size_t> labels);
double mse_onehot(const Matrix& probs, std::span<const std::size_t> labels);

/// Mean data loss over the batch.
double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch, LossKind kind);

/// Gradient of loss() with respect to every parameter.
ParamVector grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch, LossKind kind);

/// Mean over rows of KL(target_row || softmax(f(params, x_row))). The target
/// rows are treated as constants.
double kl_to_target(const ModelSpec& spec, const ParamVector& params, const Matrix& features,
                    const Matrix& target_probs);

ParamVector kl_to_target_grad(const ModelSpec& spec, const ParamVector& params,
                              const Matrix& features, const Matrix& target_probs);

/// params - eta * (gradient + weight_decay * params). eta may be zero.
ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient, double eta,
                     double weight_decay);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace fedsim
