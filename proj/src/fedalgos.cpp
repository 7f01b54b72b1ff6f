#include "fedsim/fedalgos.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

void require_updates(std::span<const ClientUpdate> updates, const char* who) {
  if (updates.empty()) throw ProtocolError(std::string(who) + ": no client updates for this round");
  const std::size_t len = updates.front().params.size();
  for (const auto& u : updates) {
    if (u.params.size() != len || u.delta.size() != len) {
      throw ConfigError(std::string(who) + ": client updates have different lengths");
    }
  }
}

std::vector<const ParamVector*> params_of(std::span<const ClientUpdate> updates) {
  std::vector<const ParamVector*> out;
  out.reserve(updates.size());
  for (const auto& u : updates) out.push_back(&u.params);
  return out;
}

// Per-coordinate mean that ignores the order of its inputs.
double order_free_mean(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  const double lo = values.front();
  double s = 0.0;
  for (double v : values) s += v - lo;
  return lo + s / static_cast<double>(values.size());
}

}  // namespace

void FedLblConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("fedlbl alpha must lie in [0, 1]");
  if (!(nu >= 0.0 && nu <= 1.0)) throw ConfigError("fedlbl nu must lie in [0, 1]");
  if (label_threshold < 1) throw ConfigError("fedlbl label threshold must be positive");
}

void FedNovaConfig::validate() const {
  if (!(alpha_scale > 0.0) || !(beta_floor > 0.0) || !(d_ref > 0.0)) {
    throw ConfigError("fednova alpha, beta and d_ref must be positive");
  }
}

ParamVector combine(std::span<const ParamVector* const> vectors, std::span<const double> weights) {
  if (vectors.empty()) throw ProtocolError("combine: nothing to combine");
  if (vectors.size() != weights.size()) throw ConfigError("combine: one weight per vector required");
  const std::size_t len = vectors.front()->size();
  for (const auto* v : vectors) {
    if (v->size() != len) throw ConfigError("combine: vectors have different lengths");
  }
  ParamVector out(len);
  std::vector<double> terms(vectors.size());
  for (std::size_t i = 0; i < len; ++i) {
    double lo = (*vectors.front())[i];
    for (const auto* v : vectors) lo = std::min(lo, (*v)[i]);
    for (std::size_t k = 0; k < vectors.size(); ++k) terms[k] = weights[k] * ((*vectors[k])[i] - lo);
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    out[i] = lo + s;
  }
  return out;
}

ParamVector fedavg_aggregate(std::span<const ClientUpdate> updates, Weighting weighting) {
  require_updates(updates, "fedavg_aggregate");
  std::vector<double> weights(updates.size());
  if (weighting == Weighting::uniform) {
    std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(updates.size()));
  } else {
    double n = 0.0;
    for (const auto& u : updates) n += static_cast<double>(u.num_samples);
    if (!(n > 0.0)) throw ProtocolError("fedavg_aggregate: clients report no samples");
    for (std::size_t k = 0; k < updates.size(); ++k) weights[k] = static_cast<double>(updates[k].num_samples) / n;
  }
  const auto vecs = params_of(updates);
  return combine(vecs, weights);
}

ParamVector fedprox_gradient(const ModelSpec& spec, const ParamVector& params, const ParamVector& theta_old,
                             double lambda, const Batch& batch, LossKind kind) {
  if (params.size() != theta_old.size()) throw ConfigError("fedprox_gradient: theta_old length mismatch");
  if (!(lambda >= 0.0)) throw ConfigError("fedprox_gradient: lambda must be nonnegative");
  ParamVector g = grad(spec, params, batch, kind);
  if (lambda != 0.0) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda * (params[i] - theta_old[i]);
  }
  return g;
}

double update_variance(std::span<const ClientUpdate> updates) {
  require_updates(updates, "update_variance");
  const std::size_t len = updates.front().delta.size();
  if (len == 0) return 0.0;
  std::vector<double> column(updates.size());
  double total = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t k = 0; k < updates.size(); ++k) column[k] = updates[k].delta[i];
    const double mean = order_free_mean(column);
    std::vector<double> sq(column.size());
    for (std::size_t k = 0; k < column.size(); ++k) sq[k] = (column[k] - mean) * (column[k] - mean);
    std::sort(sq.begin(), sq.end());
    double s = 0.0;
    for (double v : sq) s += v;
    total += s / static_cast<double>(updates.size());
  }
  return total / static_cast<double>(len);
}

double fednova_lr(double d_t, const FedNovaConfig& cfg) {
  return cfg.alpha_scale * std::max(std::sqrt(d_t / cfg.d_ref), cfg.beta_floor);
}

ParamVector fednova_global_step(const ParamVector& global, std::span<const ClientUpdate> updates,
                                const FedNovaConfig& cfg, double local_eta) {
  require_updates(updates, "fednova_global_step");
  cfg.validate();
  if (!(local_eta > 0.0)) throw ConfigError("fednova_global_step: local_eta must be positive");
  if (updates.front().delta.size() != global.size()) throw ConfigError("fednova_global_step: length mismatch");

  const double eta = fednova_lr(update_variance(updates), cfg);
  std::vector<ParamVector> scaled;
  scaled.reserve(updates.size());
  for (const auto& u : updates) {
    const double steps = static_cast<double>(std::max<std::size_t>(u.local_steps, 1));
    ParamVector s(u.delta.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = u.delta[i] / (steps * local_eta);
    scaled.push_back(std::move(s));
  }
  std::vector<const ParamVector*> ptrs;
  for (const auto& s : scaled) ptrs.push_back(&s);
  const std::vector<double> weights(scaled.size(), 1.0 / static_cast<double>(scaled.size()));
  const ParamVector mean_displacement = combine(ptrs, weights);

  // grad = -mean_displacement, so global - eta * grad.
  ParamVector out(global.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = global[i] + eta * mean_displacement[i];
  return out;
}

std::vector<double> fedlbl_weights(std::span<const ClientUpdate> updates, const FedLblConfig& cfg) {
  require_updates(updates, "fedlbl_weights");
  cfg.validate();
  double n = 0.0;
  std::size_t in_m = 0;
  for (const auto& u : updates) {
    n += static_cast<double>(u.num_samples);
    if (u.num_labels >= cfg.label_threshold) ++in_m;
  }
  if (!(n > 0.0)) throw ProtocolError("fedlbl_weights: clients report no samples");
  const std::size_t in_z = updates.size() - in_m;
  double nu = cfg.nu;
  if (in_z == 0) nu = 1.0;
  if (in_m == 0) nu = 0.0;

  std::vector<double> w(updates.size());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const double volume = (1.0 - cfg.alpha) * static_cast<double>(updates[k].num_samples) / n;
    const bool many_labels = updates[k].num_labels >= cfg.label_threshold;
    const double label_term = many_labels ? cfg.alpha * nu / static_cast<double>(in_m)
                                          : cfg.alpha * (1.0 - nu) / static_cast<double>(in_z);
    w[k] = volume + label_term;
  }
  return w;
}

ParamVector fedlbl_aggregate(std::span<const ClientUpdate> updates, const FedLblConfig& cfg) {
  const auto weights = fedlbl_weights(updates, cfg);
  const auto vecs = params_of(updates);
  return combine(vecs, weights);
}

Matrix ensemble_target(const ModelSpec& spec, std::span<const ParamVector> teachers, const Matrix& features) {
  if (teachers.empty()) throw ProtocolError("ensemble_target: no teachers");
  std::vector<Matrix> logits;
  logits.reserve(teachers.size());
  for (const auto& t : teachers) logits.push_back(forward(spec, t, features));

  Matrix mean(features.rows, spec.num_classes());
  std::vector<double> column(teachers.size());
  for (std::size_t i = 0; i < mean.data.size(); ++i) {
    for (std::size_t k = 0; k < logits.size(); ++k) column[k] = logits[k].data[i];
    mean.data[i] = order_free_mean(column);
  }
  return softmax_rows(mean);
}

ParamVector feddf_fuse(const ModelSpec& spec, std::span<const ParamVector> teachers,
                       const ParamVector& student_init, std::span<const Matrix> distill_batches, double eta,
                       std::size_t steps) {
  if (teachers.empty()) throw ProtocolError("feddf_fuse: no teachers");
  if (distill_batches.empty()) throw ConfigError("feddf_fuse: no distillation data");
  if (!(eta >= 0.0)) throw ConfigError("feddf_fuse: eta must be nonnegative");

  std::vector<Matrix> targets;
  targets.reserve(distill_batches.size());
  for (const auto& b : distill_batches) targets.push_back(ensemble_target(spec, teachers, b));

  ParamVector student = student_init;
  for (std::size_t j = 0; j < steps; ++j) {
    const std::size_t b = j % distill_batches.size();
    const ParamVector g = kl_to_target_grad(spec, student, distill_batches[b], targets[b]);
    student = sgd_step(student, g, eta, 0.0);
  }
  return student;
}

}  // namespace fedsim
