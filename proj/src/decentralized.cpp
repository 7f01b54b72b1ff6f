#include "fedsim/decentralized.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>

#include "fedsim/error.hpp"
#include "tasks.hpp"

namespace fedsim {

namespace {

void check_plan(const PeerStates& states, const PeerRoundPlan& plan, std::span<const Dataset> datasets) {
  if (datasets.size() != states.size()) {
    throw ProtocolError("peer round: " + std::to_string(states.size()) + " client states but " +
                        std::to_string(datasets.size()) + " datasets");
  }
  if (plan.senders.size() != plan.receivers.size() || plan.senders.empty()) {
    throw ProtocolError("peer round: plan must pair each sender with one receiver");
  }
  std::set<std::size_t> seen;
  for (const auto* ids : {&plan.senders, &plan.receivers}) {
    for (std::size_t id : *ids) {
      if (id >= states.size()) throw ProtocolError("peer round: client " + std::to_string(id) + " does not exist");
      if (!seen.insert(id).second) throw ProtocolError("peer round: client " + std::to_string(id) + " appears twice");
      if (datasets[id].size() == 0) throw ProtocolError("peer round: client " + std::to_string(id) + " has no data");
    }
  }
}

Rng client_rng(const PeerRoundConfig& cfg, Stream stream, std::size_t client, std::size_t round) {
  return make_rng(cfg.master_seed, {tag(stream), client, round});
}

std::vector<ParamVector> train_senders(const ModelSpec& spec, const PeerStates& states, const PeerRoundPlan& plan,
                                       std::span<const Dataset> datasets, const PeerRoundConfig& cfg,
                                       std::size_t round) {
  std::vector<ParamVector> trained(plan.senders.size());
  detail::run_tasks(plan.senders.size(), cfg.parallel, [&](std::size_t i) {
    const std::size_t s = plan.senders[i];
    Rng rng = client_rng(cfg, Stream::client_training, s, round);
    trained[i] = local_train(spec, states[s], datasets[s], cfg.sender, std::nullopt, rng).params;
  });
  return trained;
}

void add_scaled(ParamVector& g, const ParamVector& extra, double scale) {
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * extra[i];
}

ParamVector step(const ParamVector& w, const ParamVector& g, double eta) {
  ParamVector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - eta * g[i];
  return out;
}

}  // namespace

PeerRoundPlan plan_peer_round(std::size_t num_clients, std::size_t q, Rng& rng) {
  if (q < 1) throw ConfigError("peer round needs Q >= 1");
  if (2 * q > num_clients) {
    throw ConfigError("peer round needs 2Q <= K (Q = " + std::to_string(q) + ", K = " +
                      std::to_string(num_clients) + ")");
  }
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // Partial Fisher-Yates: only the first 2Q slots are needed.
  for (std::size_t i = 0; i < 2 * q; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  PeerRoundPlan plan;
  plan.senders.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(q));
  plan.receivers.assign(ids.begin() + static_cast<std::ptrdiff_t>(q), ids.begin() + static_cast<std::ptrdiff_t>(2 * q));
  return plan;
}

double mutual_loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch, const Matrix& partner_probs,
                   const MutualLossConfig& cfg) {
  double value = loss(spec, w, batch, cfg.data_loss);
  if (cfg.kl_weight != 0.0) value += cfg.kl_weight * kl_to_target(spec, w, batch.features, partner_probs);
  return value;
}

ParamVector mutual_loss_grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch,
                             const Matrix& partner_probs, const MutualLossConfig& cfg) {
  ParamVector g = grad(spec, w, batch, cfg.data_loss);
  if (cfg.kl_weight != 0.0) add_scaled(g, kl_to_target_grad(spec, w, batch.features, partner_probs), cfg.kl_weight);
  return g;
}

std::pair<ParamVector, ParamVector> mutual_transfer_step(const ModelSpec& spec, const ParamVector& w_shared,
                                                         const ParamVector& w_local, const Batch& batch,
                                                         const MutualLossConfig& cfg) {
  if (w_shared.size() != w_local.size()) throw ConfigError("mutual_transfer_step: weight lengths differ");
  if (!(cfg.eta1 >= 0.0) || !(cfg.eta2 >= 0.0)) throw ConfigError("mutual_transfer_step: rates must be nonnegative");
  const Matrix p_shared = softmax_rows(forward(spec, w_shared, batch.features));
  const Matrix p_local = softmax_rows(forward(spec, w_local, batch.features));
  const ParamVector g_shared = mutual_loss_grad(spec, w_shared, batch, p_local, cfg);
  const ParamVector g_local = mutual_loss_grad(spec, w_local, batch, p_shared, cfg);
  return {step(w_shared, g_shared, cfg.eta1), step(w_local, g_local, cfg.eta2)};
}

std::pair<ParamVector, ParamVector> mutual_transfer_sweep(const ModelSpec& spec, ParamVector w_shared,
                                                          ParamVector w_local, const Dataset& data,
                                                          std::size_t batch_size, const MutualLossConfig& cfg,
                                                          Rng& rng) {
  if (data.size() == 0) throw ProtocolError("mutual transfer: receiver has no data");
  if (batch_size < 1) throw ConfigError("mutual transfer: batch size must be positive");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    const std::size_t end = std::min(order.size(), pos + batch_size);
    const Batch batch = data.batch(std::span<const std::size_t>(order).subspan(pos, end - pos));
    auto [s, l] = mutual_transfer_step(spec, w_shared, w_local, batch, cfg);
    w_shared = std::move(s);
    w_local = std::move(l);
  }
  return {std::move(w_shared), std::move(w_local)};
}

ParamVector fullavg_merge(const ParamVector& shared, const ParamVector& local) {
  if (shared.size() != local.size()) throw ConfigError("fullavg_merge: weight lengths differ");
  ParamVector out(shared.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (shared[i] + local[i]) / 2.0;
  return out;
}

std::pair<ParamVector, ParamVector> combo_exchange(const ParamVector& sender, const ParamVector& receiver) {
  if (sender.size() != receiver.size()) throw ConfigError("combo_exchange: weight lengths differ");
  if (sender.size() < 2) throw ConfigError("combo_exchange: need at least 2 parameters to split");
  const std::size_t split = sender.size() / 2;
  ParamVector s = sender;
  ParamVector r = receiver;
  for (std::size_t i = 0; i < split; ++i) s[i] = (sender[i] + receiver[i]) / 2.0;
  for (std::size_t i = split; i < r.size(); ++i) r[i] = (receiver[i] + sender[i]) / 2.0;
  return {std::move(s), std::move(r)};
}

PeerStates defkt_round(const ModelSpec& spec, const PeerStates& states, const PeerRoundPlan& plan,
                       std::span<const Dataset> datasets, const PeerRoundConfig& cfg, std::size_t round) {
  check_plan(states, plan, datasets);
  const auto trained = train_senders(spec, states, plan, datasets, cfg, round);
  PeerStates next = states;
  detail::run_tasks(plan.receivers.size(), cfg.parallel, [&](std::size_t i) {
    const std::size_t r = plan.receivers[i];
    Rng rng = client_rng(cfg, Stream::receiver_training, r, round);
    auto swept = mutual_transfer_sweep(spec, trained[i], states[r], datasets[r], cfg.receiver_batch_size, cfg.mutual, rng);
    // The receiver adopts the updated shared weights; its own trained copy is dropped.
    next[r] = std::move(swept.first);
  });
  for (std::size_t i = 0; i < plan.senders.size(); ++i) next[plan.senders[i]] = trained[i];
  return next;
}

PeerStates fullavg_round(const ModelSpec& spec, const PeerStates& states, const PeerRoundPlan& plan,
                         std::span<const Dataset> datasets, const PeerRoundConfig& cfg, std::size_t round) {
  check_plan(states, plan, datasets);
  const auto trained = train_senders(spec, states, plan, datasets, cfg, round);
  PeerStates next = states;
  for (std::size_t i = 0; i < plan.senders.size(); ++i) {
    next[plan.senders[i]] = trained[i];
    next[plan.receivers[i]] = fullavg_merge(trained[i], states[plan.receivers[i]]);
  }
  return next;
}

PeerStates combo_round(const ModelSpec& spec, const PeerStates& states, const PeerRoundPlan& plan,
                       std::span<const Dataset> datasets, const PeerRoundConfig& cfg, std::size_t round) {
  check_plan(states, plan, datasets);
  const auto trained = train_senders(spec, states, plan, datasets, cfg, round);
  PeerStates next = states;
  for (std::size_t i = 0; i < plan.senders.size(); ++i) {
    auto [s, r] = combo_exchange(trained[i], states[plan.receivers[i]]);
    next[plan.senders[i]] = std::move(s);
    next[plan.receivers[i]] = std::move(r);
  }
  return next;
}

}  // namespace fedsim
