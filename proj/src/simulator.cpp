#include "fedsim/simulator.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fedsim/error.hpp"
#include "tasks.hpp"

namespace fedsim {

namespace {

constexpr std::array<std::pair<Algorithm, std::string_view>, 8> kAlgorithms{{
    {Algorithm::fedavg, "fedavg"},
    {Algorithm::fedprox, "fedprox"},
    {Algorithm::fednova, "fednova"},
    {Algorithm::fedlbl, "fedlbl"},
    {Algorithm::feddf, "feddf"},
    {Algorithm::defkt, "defkt"},
    {Algorithm::fullavg, "fullavg"},
    {Algorithm::combo, "combo"},
}};

constexpr std::array<std::pair<PartitionStrategy, std::string_view>, 7> kStrategies{{
    {PartitionStrategy::iid, "iid"},
    {PartitionStrategy::label_quantity, "label_quantity"},
    {PartitionStrategy::label_dirichlet, "label_dirichlet"},
    {PartitionStrategy::quantity_dirichlet, "quantity_dirichlet"},
    {PartitionStrategy::feature_noise, "feature_noise"},
    {PartitionStrategy::cube, "cube"},
    {PartitionStrategy::source, "source"},
}};

template <class Table, class Enum>
std::string_view name_of(const Table& table, Enum value) {
  for (const auto& [v, n] : table) {
    if (v == value) return n;
  }
  return "?";
}

template <class Table>
auto parse_name(const Table& table, std::string_view name, const char* what) {
  for (const auto& [v, n] : table) {
    if (n == name) return v;
  }
  std::string options;
  for (const auto& entry : table) options += (options.empty() ? "" : "|") + std::string(entry.second);
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(name) + "' (expected " + options + ")");
}

std::vector<Matrix> make_distill_batches(const SimConfig& cfg, const Dataset& pool) {
  const std::size_t dim = pool.dim();
  std::vector<double> lo(dim, std::numeric_limits<double>::max());
  std::vector<double> hi(dim, std::numeric_limits<double>::lowest());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      lo[d] = std::min(lo[d], pool.features(i, d));
      hi[d] = std::max(hi[d], pool.features(i, d));
    }
  }
  Rng rng = make_rng(cfg.seed, {tag(Stream::distill_data)});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Matrix> batches;
  for (std::size_t pos = 0; pos < cfg.distill.samples; pos += cfg.distill.batch_size) {
    const std::size_t rows = std::min(cfg.distill.batch_size, cfg.distill.samples - pos);
    Matrix m(rows, dim);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t d = 0; d < dim; ++d) m(r, d) = lo[d] + (hi[d] - lo[d]) * unit(rng);
    }
    batches.push_back(std::move(m));
  }
  return batches;
}

double pooled_accuracy(const ModelSpec& spec, const std::vector<std::pair<const ParamVector*, const Dataset*>>& sets) {
  std::size_t correct = 0, total = 0;
  for (const auto& [params, data] : sets) {
    if (data->size() == 0) continue;
    const Matrix logits = forward(spec, *params, data->features);
    for (std::size_t r = 0; r < logits.rows; ++r) {
      if (argmax(logits.row(r)) == data->labels[r]) ++correct;
    }
    total += data->size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : std::numeric_limits<double>::quiet_NaN();
}

LocalTrainOptions local_options(const SimConfig& cfg, LossKind loss) {
  return LocalTrainOptions{cfg.local_epochs, cfg.batch_size, cfg.local_eta, cfg.weight_decay, loss};
}

void run_central_round(const SimConfig& cfg, const Environment& env, CentralState& state, std::size_t round,
                       RoundRecord& record) {
  const auto ids = sample_clients(cfg.clients, cfg.participation, round, cfg.seed);
  const auto opts = local_options(cfg, LossKind::cross_entropy);
  std::vector<ClientUpdate> updates(ids.size());
  detail::run_tasks(ids.size(), cfg.parallel, [&](std::size_t i) {
    const std::size_t k = ids[i];
    Rng rng = make_rng(cfg.seed, {tag(Stream::client_training), k, round});
    std::optional<Proximal> prox;
    if (cfg.algorithm == Algorithm::fedprox) prox = Proximal{state.global, cfg.prox_lambda};
    updates[i] = local_train(env.spec, state.global, env.client_train[k], opts, prox, rng);
  });

  switch (cfg.algorithm) {
    case Algorithm::fedavg:
    case Algorithm::fedprox:
      state.global = fedavg_aggregate(updates, cfg.weighting);
      break;
    case Algorithm::fednova:
      state.global = fednova_global_step(state.global, updates, cfg.fednova, cfg.local_eta);
      break;
    case Algorithm::fedlbl:
      state.global = fedlbl_aggregate(updates, cfg.fedlbl);
      break;
    case Algorithm::feddf: {
      std::vector<ParamVector> teachers;
      teachers.reserve(updates.size());
      for (const auto& u : updates) teachers.push_back(u.params);
      const ParamVector student = fedavg_aggregate(updates, cfg.weighting);
      state.global = feddf_fuse(env.spec, teachers, student, env.distill_batches, cfg.distill.eta, cfg.distill.steps);
      break;
    }
    default:
      throw ConfigError("algorithm " + std::string(to_string(cfg.algorithm)) + " is not a centralized algorithm");
  }
  record.participants = ids;
}

void run_peer_round(const SimConfig& cfg, const Environment& env, PeerState& state, std::size_t round,
                    RoundRecord& record) {
  Rng plan_rng = make_rng(cfg.seed, {tag(Stream::peer_plan), round});
  const PeerRoundPlan plan = plan_peer_round(cfg.clients, cfg.peers, plan_rng);
  PeerRoundConfig pcfg;
  pcfg.sender = local_options(cfg, cfg.mutual.data_loss);
  pcfg.mutual = cfg.mutual;
  pcfg.receiver_batch_size = cfg.batch_size;
  pcfg.master_seed = cfg.seed;
  pcfg.parallel = cfg.parallel;

  switch (cfg.algorithm) {
    case Algorithm::defkt:
      state.models = defkt_round(env.spec, state.models, plan, env.client_train, pcfg, round);
      break;
    case Algorithm::fullavg:
      state.models = fullavg_round(env.spec, state.models, plan, env.client_train, pcfg, round);
      break;
    case Algorithm::combo:
      state.models = combo_round(env.spec, state.models, plan, env.client_train, pcfg, round);
      break;
    default:
      throw ConfigError("algorithm " + std::string(to_string(cfg.algorithm)) + " is not a decentralized algorithm");
  }
  record.participants = plan.senders;
  record.participants.insert(record.participants.end(), plan.receivers.begin(), plan.receivers.end());
  std::sort(record.participants.begin(), record.participants.end());
}

}  // namespace

std::string_view to_string(Algorithm a) { return name_of(kAlgorithms, a); }
std::string_view to_string(PartitionStrategy s) { return name_of(kStrategies, s); }
std::string_view to_string(DatasetKind k) { return k == DatasetKind::blobs ? "blobs" : "cube"; }

Algorithm parse_algorithm(std::string_view name) { return parse_name(kAlgorithms, name, "algorithm"); }

PartitionStrategy parse_partition_strategy(std::string_view name) {
  return parse_name(kStrategies, name, "partition strategy");
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "blobs") return DatasetKind::blobs;
  if (name == "cube") return DatasetKind::cube;
  throw ConfigError("unknown dataset kind '" + std::string(name) + "' (expected blobs|cube)");
}

bool is_decentralized(Algorithm a) {
  return a == Algorithm::defkt || a == Algorithm::fullavg || a == Algorithm::combo;
}

void SimConfig::validate_data() const {
  if (clients < 1) throw ConfigError("clients must be at least 1");
  if (!(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
    throw ConfigError("dataset.test_fraction must lie in (0, 1)");
  }
  if (dataset.kind == DatasetKind::blobs && (dataset.classes < 2 || dataset.per_class < 1 || dataset.dim < 1)) {
    throw ConfigError("blobs need >= 2 classes, per_class >= 1 and dim >= 1");
  }
  if (dataset.kind == DatasetKind::cube && dataset.per_octant < 1) throw ConfigError("cube needs per_octant >= 1");
  if (partition.strategy == PartitionStrategy::cube && dataset.kind != DatasetKind::cube) {
    throw ConfigError("partition.strategy=cube requires dataset.kind=cube");
  }
  if (partition.strategy == PartitionStrategy::source && dataset.sources < clients) {
    throw ConfigError("partition.strategy=source requires dataset.sources >= clients");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden layer sizes must be positive");
  }
}

void SimConfig::validate() const {
  validate_data();
  if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("participation must lie in (0, 1]");
  if (!is_decentralized(algorithm) && participants_per_round(clients, participation) < 1) {
    throw ConfigError("participation * clients must select at least one client per round");
  }
  if (local_epochs < 1) throw ConfigError("local_epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (rounds < 1) throw ConfigError("rounds must be at least 1");
  if (!(local_eta >= 0.0)) throw ConfigError("local_eta must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(prox_lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  if (algorithm == Algorithm::fednova) {
    fednova.validate();
    if (!(local_eta > 0.0)) throw ConfigError("fednova needs a positive local_eta");
  }
  if (algorithm == Algorithm::fedlbl) fedlbl.validate();
  if (algorithm == Algorithm::feddf) {
    if (distill.samples < 1 || distill.batch_size < 1) throw ConfigError("feddf needs distillation samples");
    if (!(distill.eta >= 0.0)) throw ConfigError("feddf.eta must be nonnegative");
  }
  if (is_decentralized(algorithm)) {
    if (peers < 1 || 2 * peers > clients) {
      throw ConfigError("decentralized rounds need 1 <= peers and 2 * peers <= clients");
    }
    if (!(mutual.eta1 >= 0.0) || !(mutual.eta2 >= 0.0)) throw ConfigError("mutual rates must be nonnegative");
  }
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction, std::uint64_t seed) {
  Rng rng = make_rng(seed, {tag(Stream::split), 0});
  std::vector<std::vector<std::size_t>> by_label(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_label[data.labels[i]].push_back(i);
  std::vector<std::size_t> train, test;
  for (auto& idx : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  if (train.empty() || test.empty()) throw ConfigError("dataset too small for the requested test fraction");
  return {data.subset(train), data.subset(test)};
}

Dataset build_dataset(const SimConfig& cfg) {
  const auto& d = cfg.dataset;
  Dataset data = d.kind == DatasetKind::blobs
                     ? gen_blobs(d.classes, d.per_class, d.dim, d.spread, cfg.seed, d.center_scale)
                     : gen_cube(d.per_octant, d.cube_scale, cfg.seed);
  if (d.sources > 0) data = with_sources(data, d.sources, d.source_shift, cfg.seed);
  return data;
}

PartitionMap build_partition(const SimConfig& cfg, Dataset& data) {
  const auto& p = cfg.partition;
  switch (p.strategy) {
    case PartitionStrategy::iid:
      return partition_iid(data, cfg.clients, cfg.seed);
    case PartitionStrategy::label_quantity:
      return partition_label_quantity(data, cfg.clients, p.labels_per_client, cfg.seed);
    case PartitionStrategy::label_dirichlet:
      return partition_label_dirichlet(data, cfg.clients, p.beta, cfg.seed);
    case PartitionStrategy::quantity_dirichlet:
      return partition_quantity_dirichlet(data, cfg.clients, p.beta, cfg.seed);
    case PartitionStrategy::feature_noise: {
      PartitionMap map = partition_iid(data, cfg.clients, cfg.seed);
      data = apply_feature_noise(data, map, p.sigma_max, cfg.seed);
      return map;
    }
    case PartitionStrategy::cube:
      return partition_cube_symmetric(data, cfg.clients, cfg.seed);
    case PartitionStrategy::source:
      return partition_by_source(data, cfg.clients, cfg.seed);
  }
  throw ConfigError("unhandled partition strategy");
}

Environment build_environment(const SimConfig& cfg) {
  cfg.validate();
  Environment env;
  auto [train, test] = split_train_test(build_dataset(cfg), cfg.dataset.test_fraction, cfg.seed);
  env.train_pool = std::move(train);
  env.test = std::move(test);
  env.partition = build_partition(cfg, env.train_pool);

  env.spec.layer_dims.push_back(env.train_pool.dim());
  env.spec.layer_dims.insert(env.spec.layer_dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  env.spec.layer_dims.push_back(env.train_pool.num_classes);
  env.spec.validate();

  for (std::size_t k = 0; k < env.partition.num_clients(); ++k) {
    std::vector<std::size_t> idx = env.partition.assignments[k];
    Rng rng = make_rng(cfg.seed, {tag(Stream::split), 1, k});
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(idx.size())));
    n_val = std::min(n_val, idx.size() - 1);
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(val.begin(), val.end());
    std::sort(tr.begin(), tr.end());
    env.client_train.push_back(env.train_pool.subset(tr));
    env.client_validation.push_back(env.train_pool.subset(val));
  }
  if (cfg.algorithm == Algorithm::feddf) env.distill_batches = make_distill_batches(cfg, env.train_pool);
  return env;
}

SimState initial_state(const SimConfig& cfg, const Environment& env) {
  Rng rng = make_rng(cfg.seed, {tag(Stream::init)});
  ParamVector init = init_params(env.spec, rng);
  // Every client starts from the same weights.
  if (is_decentralized(cfg.algorithm)) return PeerState{PeerStates(cfg.clients, init)};
  return CentralState{std::move(init)};
}

std::size_t participants_per_round(std::size_t num_clients, double fraction) {
  // The epsilon keeps products like 0.29 * 100 = 28.999... from losing a client.
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(num_clients) + 1e-9));
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, double fraction, std::size_t round,
                                        std::uint64_t master_seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("participation must lie in (0, 1]");
  const std::size_t m = participants_per_round(num_clients, fraction);
  if (m < 1) throw ConfigError("participation * clients selects no client");
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng = make_rng(master_seed, {tag(Stream::client_sampling), round});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& test) {
  if (test.size() == 0) throw ConfigError("evaluate: empty test set");
  const Matrix logits = forward(spec, params, test.features);
  const Matrix probs = softmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    if (argmax(logits.row(r)) == test.labels[r]) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(test.size()), cross_entropy(probs, test.labels)};
}

RoundRecord run_round(const SimConfig& cfg, const Environment& env, SimState& state, std::size_t round) {
  const auto start = std::chrono::steady_clock::now();
  RoundRecord record;
  record.round = round;
  if (is_decentralized(cfg.algorithm) != std::holds_alternative<PeerState>(state)) {
    throw ConfigError("simulation state does not match the algorithm family of " +
                      std::string(to_string(cfg.algorithm)));
  }
  if (auto* central = std::get_if<CentralState>(&state)) {
    run_central_round(cfg, env, *central, round, record);
  } else {
    run_peer_round(cfg, env, std::get<PeerState>(state), round, record);
  }

  const bool evaluate_now = round % cfg.eval_every == 0 || round == cfg.rounds;
  if (evaluate_now) {
    std::vector<std::pair<const ParamVector*, const Dataset*>> val_sets;
    if (auto* central = std::get_if<CentralState>(&state)) {
      const Evaluation e = evaluate(env.spec, central->global, env.test);
      record.test_accuracy = e.accuracy;
      record.test_loss = e.loss;
      for (std::size_t k : record.participants) val_sets.emplace_back(&central->global, &env.client_validation[k]);
    } else {
      // Global accuracy of a serverless federation: mean over all client models.
      const auto& models = std::get<PeerState>(state).models;
      double acc = 0.0, loss_sum = 0.0;
      for (const auto& m : models) {
        const Evaluation e = evaluate(env.spec, m, env.test);
        acc += e.accuracy;
        loss_sum += e.loss;
      }
      record.test_accuracy = acc / static_cast<double>(models.size());
      record.test_loss = loss_sum / static_cast<double>(models.size());
      for (std::size_t k : record.participants) val_sets.emplace_back(&models[k], &env.client_validation[k]);
    }
    record.validation_accuracy = pooled_accuracy(env.spec, val_sets);
  } else {
    record.test_accuracy = record.test_loss = record.validation_accuracy = std::numeric_limits<double>::quiet_NaN();
  }
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

MetricsLog run_simulation(const SimConfig& cfg) {
  const Environment env = build_environment(cfg);
  SimState state = initial_state(cfg, env);
  MetricsLog log;
  log.algorithm = cfg.algorithm;
  log.partition = cfg.partition.strategy;
  log.seed = cfg.seed;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) log.rounds.push_back(run_round(cfg, env, state, t));
  return log;
}

}  // namespace fedsim
