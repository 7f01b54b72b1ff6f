#pragma once

// Serverless rounds: Def-KT mutual knowledge transfer and the FullAvg and
// Combo baselines. In every round Q senders train locally and each hands its
// weights to one receiver; the two sets never overlap.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/training.hpp"

namespace fedsim {

/// receivers[i] is paired with senders[i].
struct PeerRoundPlan {
  std::vector<std::size_t> senders;
  std::vector<std::size_t> receivers;

  bool operator==(const PeerRoundPlan&) const = default;
};

struct MutualLossConfig {
  double eta1 = 0.05;  // shared (sender) weights
  double eta2 = 0.05;  // receiver's local weights
  LossKind data_loss = LossKind::mse_onehot;
  /// Scales both KL terms; 0 turns mutual transfer into two independent fits.
  double kl_weight = 1.0;
};

struct PeerRoundConfig {
  LocalTrainOptions sender;  // local training of senders
  MutualLossConfig mutual;
  std::size_t receiver_batch_size = 64;
  std::uint64_t master_seed = 0;
  bool parallel = false;
};

using PeerStates = std::vector<ParamVector>;

/// Draws 2Q distinct clients; the first Q become senders. Requires 1 <= Q, 2Q <= K.
PeerRoundPlan plan_peer_round(std::size_t num_clients, std::size_t q, Rng& rng);

/// One simultaneous update of both models on a batch. Both prediction sets
/// come from the pre-step weights and each KL term treats the partner's
/// predictions as constants:
///   Loss1 = Lc(P1, y) + KL(P2 || P1),  Loss2 = Lc(P2, y) + KL(P1 || P2).
std::pair<ParamVector, ParamVector> mutual_transfer_step(const ModelSpec& spec, const ParamVector& w_shared,
                                                         const ParamVector& w_local, const Batch& batch,
                                                         const MutualLossConfig& cfg);

/// Value of Loss1 for w (partner predictions frozen). Used by gradient checks.
double mutual_loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch, const Matrix& partner_probs,
                   const MutualLossConfig& cfg);

/// Gradient of mutual_loss with respect to w.
ParamVector mutual_loss_grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch,
                             const Matrix& partner_probs, const MutualLossConfig& cfg);

/// One pass of mutual transfer over shuffled mini-batches of `data`.
/// Returns the updated (shared, local) pair.
std::pair<ParamVector, ParamVector> mutual_transfer_sweep(const ModelSpec& spec, ParamVector w_shared,
                                                          ParamVector w_local, const Dataset& data,
                                                          std::size_t batch_size, const MutualLossConfig& cfg,
                                                          Rng& rng);

/// (shared + local) / 2.
ParamVector fullavg_merge(const ParamVector& shared, const ParamVector& local);

/// Combo exchange with split point floor(len / 2): the receiver averages its
/// second segment with the sender's second segment, the sender averages its
/// first segment with the receiver's first segment. Other coordinates are
/// left untouched. Returns (sender', receiver').
std::pair<ParamVector, ParamVector> combo_exchange(const ParamVector& sender, const ParamVector& receiver);

PeerStates defkt_round(const ModelSpec& spec, const PeerStates& states, const PeerRoundPlan& plan,
                       std::span<const Dataset> datasets, const PeerRoundConfig& cfg, std::size_t round);

PeerStates fullavg_round(const ModelSpec& spec, const PeerStates& states, const PeerRoundPlan& plan,
                         std::span<const Dataset> datasets, const PeerRoundConfig& cfg, std::size_t round);

PeerStates combo_round(const ModelSpec& spec, const PeerStates& states, const PeerRoundPlan& plan,
                       std::span<const Dataset> datasets, const PeerRoundConfig& cfg, std::size_t round);

}  // namespace fedsim
