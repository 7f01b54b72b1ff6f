#include "fedsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

std::string dims_to_string(const std::vector<std::size_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

void check_params(const ModelSpec& spec, const ParamVector& params) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw ConfigError("parameter vector has " + std::to_string(params.size()) +
                      " entries, model " + dims_to_string(spec.layer_dims) + " needs " +
                      std::to_string(spec.param_count()));
  }
}

void check_features(const ModelSpec& spec, const Matrix& features) {
  if (features.cols != spec.input_dim()) {
    throw ConfigError("feature matrix has " + std::to_string(features.cols) +
                      " columns, model input dim is " + std::to_string(spec.input_dim()));
  }
  if (features.data.size() != features.rows * features.cols) {
    throw ConfigError("feature matrix storage does not match its shape");
  }
}

void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t num_classes) {
  if (labels.size() != rows) throw ConfigError("label count does not match row count");
  for (std::size_t y : labels) {
    if (y >= num_classes) {
      throw ConfigError("label " + std::to_string(y) + " out of range for " +
                        std::to_string(num_classes) + " classes");
    }
  }
}

// Pre-activations and activations of every layer, kept for backprop.
struct Trace {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l
  Matrix logits;
};

Trace run_forward(const ModelSpec& spec, const ParamVector& params, const Matrix& features) {
  Trace trace;
  trace.inputs.reserve(spec.num_layers());
  Matrix current = features;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.layer_dims[l];
    const std::size_t fan_out = spec.layer_dims[l + 1];
    const double* w = params.data() + offset;
    const double* b = w + fan_in * fan_out;
    offset += (fan_in + 1) * fan_out;

    Matrix out(current.rows, fan_out);
    for (std::size_t r = 0; r < current.rows; ++r) {
      const double* x = current.data.data() + r * fan_in;
      for (std::size_t o = 0; o < fan_out; ++o) {
        double z = b[o];
        const double* wrow = w + o * fan_in;
        for (std::size_t i = 0; i < fan_in; ++i) z += wrow[i] * x[i];
        out(r, o) = z;
      }
    }
    const bool hidden = l + 1 < spec.num_layers();
    if (hidden) {
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    }
    trace.inputs.push_back(std::move(current));
    current = std::move(out);
  }
  trace.logits = std::move(current);
  return trace;
}

// dlogits already carries the 1/n batch-mean factor.
ParamVector backprop(const ModelSpec& spec, const ParamVector& params, const Trace& trace,
                     Matrix dlogits) {
  ParamVector g(params.size(), 0.0);
  std::vector<std::size_t> offsets(spec.num_layers());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    offsets[l] = offset;
    offset += (spec.layer_dims[l] + 1) * spec.layer_dims[l + 1];
  }

  Matrix delta = std::move(dlogits);
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const std::size_t fan_in = spec.layer_dims[l];
    const std::size_t fan_out = spec.layer_dims[l + 1];
    const Matrix& x = trace.inputs[l];
    const double* w = params.data() + offsets[l];
    double* gw = g.data() + offsets[l];
    double* gb = gw + fan_in * fan_out;

    for (std::size_t r = 0; r < delta.rows; ++r) {
      const double* xr = x.data.data() + r * fan_in;
      for (std::size_t o = 0; o < fan_out; ++o) {
        const double d = delta(r, o);
        gb[o] += d;
        double* gwrow = gw + o * fan_in;
        for (std::size_t i = 0; i < fan_in; ++i) gwrow[i] += d * xr[i];
      }
    }
    if (l == 0) break;

    // x is the ReLU output of the previous layer; x > 0 exactly where the
    // pre-activation was positive.
    Matrix prev(delta.rows, fan_in);
    for (std::size_t r = 0; r < delta.rows; ++r) {
      for (std::size_t i = 0; i < fan_in; ++i) {
        if (x(r, i) <= 0.0) continue;
        double s = 0.0;
        for (std::size_t o = 0; o < fan_out; ++o) s += delta(r, o) * w[o * fan_in + i];
        prev(r, i) = s;
      }
    }
    delta = std::move(prev);
  }
  return g;
}

}  // namespace

std::size_t ModelSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) n += (layer_dims[l] + 1) * layer_dims[l + 1];
  return n;
}

void ModelSpec::validate() const {
  if (layer_dims.size() < 2) throw ConfigError("model needs at least an input and an output dim");
  for (std::size_t d : layer_dims) {
    if (d == 0) throw ConfigError("model dims must be positive: " + dims_to_string(layer_dims));
  }
  if (layer_dims.back() < 2) throw ConfigError("model needs at least 2 output classes");
}

ParamVector init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ParamVector params;
  params.reserve(spec.param_count());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.layer_dims[l];
    const std::size_t fan_out = spec.layer_dims[l + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) params.push_back(dist(rng));
    params.insert(params.end(), fan_out, 0.0);
  }
  return params;
}

Matrix forward(const ModelSpec& spec, const ParamVector& params, const Matrix& features) {
  check_params(spec, params);
  check_features(spec, features);
  return run_forward(spec, params, features).logits;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw ConfigError("kl_divergence: length mismatch (" + std::to_string(p.size()) + " vs " +
                      std::to_string(q.size()) + ")");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    sum += p[i] * std::log(p[i] / std::max(q[i], kProbFloor));
  }
  return sum;
}

double cross_entropy(const Matrix& probs, std::span<const std::size_t> labels) {
  check_labels(labels, probs.rows, probs.cols);
  double sum = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) sum -= std::log(std::max(probs(r, labels[r]), kProbFloor));
  return sum / static_cast<double>(probs.rows);
}

double mse_onehot(const Matrix& probs, std::span<const std::size_t> labels) {
  check_labels(labels, probs.rows, probs.cols);
  double sum = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) {
    for (std::size_t j = 0; j < probs.cols; ++j) {
      const double diff = probs(r, j) - (j == labels[r] ? 1.0 : 0.0);
      sum += diff * diff;
    }
  }
  return sum / static_cast<double>(probs.rows);
}

double loss(const ModelSpec& spec, const ParamVector& params, const Batch& batch, LossKind kind) {
  const Matrix probs = softmax_rows(forward(spec, params, batch.features));
  return kind == LossKind::cross_entropy ? cross_entropy(probs, batch.labels)
                                         : mse_onehot(probs, batch.labels);
}

ParamVector grad(const ModelSpec& spec, const ParamVector& params, const Batch& batch, LossKind kind) {
  check_params(spec, params);
  check_features(spec, batch.features);
  check_labels(batch.labels, batch.features.rows, spec.num_classes());
  if (batch.size() == 0) throw ConfigError("grad: empty batch");

  Trace trace = run_forward(spec, params, batch.features);
  const Matrix probs = softmax_rows(trace.logits);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::size_t classes = spec.num_classes();

  Matrix dlogits(probs.rows, classes);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    const std::size_t y = batch.labels[r];
    if (kind == LossKind::cross_entropy) {
      for (std::size_t j = 0; j < classes; ++j) dlogits(r, j) = (probs(r, j) - (j == y ? 1.0 : 0.0)) * inv_n;
    } else {
      // dL/dp_j = 2 (p_j - y_j); chain through the softmax Jacobian.
      double dot = 0.0;
      for (std::size_t j = 0; j < classes; ++j) {
        dot += 2.0 * (probs(r, j) - (j == y ? 1.0 : 0.0)) * probs(r, j);
      }
      for (std::size_t j = 0; j < classes; ++j) {
        const double gp = 2.0 * (probs(r, j) - (j == y ? 1.0 : 0.0));
        dlogits(r, j) = probs(r, j) * (gp - dot) * inv_n;
      }
    }
  }
  return backprop(spec, params, trace, std::move(dlogits));
}

double kl_to_target(const ModelSpec& spec, const ParamVector& params, const Matrix& features,
                    const Matrix& target_probs) {
  const Matrix probs = softmax_rows(forward(spec, params, features));
  if (target_probs.rows != probs.rows || target_probs.cols != probs.cols) {
    throw ConfigError("kl_to_target: target shape does not match model output");
  }
  double sum = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) sum += kl_divergence(target_probs.row(r), probs.row(r));
  return sum / static_cast<double>(probs.rows);
}

ParamVector kl_to_target_grad(const ModelSpec& spec, const ParamVector& params,
                              const Matrix& features, const Matrix& target_probs) {
  check_params(spec, params);
  check_features(spec, features);
  if (features.rows == 0) throw ConfigError("kl_to_target_grad: empty batch");
  if (target_probs.rows != features.rows || target_probs.cols != spec.num_classes()) {
    throw ConfigError("kl_to_target_grad: target shape does not match model output");
  }
  Trace trace = run_forward(spec, params, features);
  const Matrix probs = softmax_rows(trace.logits);
  const double inv_n = 1.0 / static_cast<double>(features.rows);

  // d/dz KL(t || softmax(z)) = p - t for a target that sums to one. Equal
  // distributions give an exactly zero gradient.
  Matrix dlogits(probs.rows, probs.cols);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    for (std::size_t j = 0; j < probs.cols; ++j) {
      dlogits(r, j) = (probs(r, j) - target_probs(r, j)) * inv_n;
    }
  }
  return backprop(spec, params, trace, std::move(dlogits));
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient, double eta,
                     double weight_decay) {
  if (params.size() != gradient.size()) {
    throw ConfigError("sgd_step: params and gradient lengths differ (" + std::to_string(params.size()) +
                      " vs " + std::to_string(gradient.size()) + ")");
  }
  if (!(eta >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("sgd_step: eta and weight_decay must be nonnegative");
  }
  ParamVector out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out[i] = params[i] - eta * (gradient[i] + weight_decay * params[i]);
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace fedsim
