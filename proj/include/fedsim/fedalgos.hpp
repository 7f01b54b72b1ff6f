#pragma once

// Server-side aggregation and fusion: FedAvg, the FedProx proximal gradient,
// FedNova's variance-adaptive step, FedLbl's two-group weighting and FedDF
// ensemble distillation.
//
// Every combination of client vectors is computed per coordinate as
// min + sum_k w_k (x_k - min) with the terms summed in sorted order, so the
// result does not depend on the order of the update list and identical
// inputs come back unchanged.

#include <cstddef>
#include <span>
#include <vector>

#include "fedsim/nn.hpp"

namespace fedsim {

struct ClientUpdate {
  ParamVector params;         // weights after local training
  ParamVector delta;          // params - round-start global params
  std::size_t num_samples = 0;  // n_k
  std::size_t num_labels = 0;   // |c_k|
  std::size_t local_steps = 0;  // SGD steps taken to produce delta
};

enum class Weighting { uniform, by_samples };

struct FedLblConfig {
  double alpha = 0.5;
  double nu = 0.5;
  std::size_t label_threshold = 2;

  void validate() const;
};

struct FedNovaConfig {
  double alpha_scale = 1.0;
  double beta_floor = 1.0;
  double d_ref = 1.0;

  void validate() const;
};

/// Weighted combination of equal-length vectors; weights should sum to 1.
ParamVector combine(std::span<const ParamVector* const> vectors, std::span<const double> weights);

ParamVector fedavg_aggregate(std::span<const ClientUpdate> updates, Weighting weighting = Weighting::uniform);

/// grad f_k(params) + lambda * (params - theta_old).
ParamVector fedprox_gradient(const ModelSpec& spec, const ParamVector& params, const ParamVector& theta_old,
                             double lambda, const Batch& batch, LossKind kind = LossKind::cross_entropy);

/// Mean over coordinates of the population variance of the client deltas.
double update_variance(std::span<const ClientUpdate> updates);

/// alpha * max(sqrt(d_t / d_ref), beta).
double fednova_lr(double d_t, const FedNovaConfig& cfg);

/// global - eta * grad, where grad = -mean_k(delta_k / (steps_k * local_eta))
/// is the gradient implied by the clients' displacement and eta = fednova_lr(D_t).
ParamVector fednova_global_step(const ParamVector& global, std::span<const ClientUpdate> updates,
                                const FedNovaConfig& cfg, double local_eta);

/// Per-client weights. Clients with fewer labels than the threshold form
/// group Z, the rest group M:
///   M: (1 - alpha) n_k / n + alpha * nu / |M|
///   Z: (1 - alpha) n_k / n + alpha * (1 - nu) / |Z|
/// An empty group hands its alpha mass to the other one.
std::vector<double> fedlbl_weights(std::span<const ClientUpdate> updates, const FedLblConfig& cfg);

ParamVector fedlbl_aggregate(std::span<const ClientUpdate> updates, const FedLblConfig& cfg);

/// softmax of the teachers' mean logits on `features`.
Matrix ensemble_target(const ModelSpec& spec, std::span<const ParamVector> teachers, const Matrix& features);

/// Runs `steps` SGD steps on KL(ensemble || student), cycling through the
/// distillation batches. Labels of the distillation data are never used.
ParamVector feddf_fuse(const ModelSpec& spec, std::span<const ParamVector> teachers,
                       const ParamVector& student_init, std::span<const Matrix> distill_batches, double eta,
                       std::size_t steps);

}  // namespace fedsim
