#pragma once

// Experiment orchestration. A run is a pure function of SimConfig: every
// random draw derives from (seed, stream, client, round), so the per-client
// tasks inside a round can run on threads without changing the result.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/decentralized.hpp"
#include "fedsim/fedalgos.hpp"
#include "fedsim/nn.hpp"
#include "fedsim/training.hpp"

namespace fedsim {

enum class Algorithm { fedavg, fedprox, fednova, fedlbl, feddf, defkt, fullavg, combo };

enum class PartitionStrategy { iid, label_quantity, label_dirichlet, quantity_dirichlet, feature_noise, cube, source };

enum class DatasetKind { blobs, cube };

std::string_view to_string(Algorithm a);
std::string_view to_string(PartitionStrategy s);
std::string_view to_string(DatasetKind k);
Algorithm parse_algorithm(std::string_view name);
PartitionStrategy parse_partition_strategy(std::string_view name);
DatasetKind parse_dataset_kind(std::string_view name);

bool is_decentralized(Algorithm a);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::blobs;
  std::size_t classes = 8;
  std::size_t per_class = 250;
  std::size_t dim = 2;
  double spread = 0.5;
  double center_scale = 4.0;
  std::size_t per_octant = 250;
  double cube_scale = 1.0;
  std::size_t sources = 0;  // > 0 tags samples with provenance groups
  double source_shift = 0.5;
  double test_fraction = 0.2;
};

struct PartitionConfig {
  PartitionStrategy strategy = PartitionStrategy::iid;
  std::size_t labels_per_client = 2;
  double beta = 0.5;
  double sigma_max = 0.5;
};

struct DistillConfig {
  std::size_t steps = 50;
  double eta = 0.05;
  std::size_t samples = 256;
  std::size_t batch_size = 64;
};

struct SimConfig {
  std::size_t clients = 16;      // K
  double participation = 0.2;    // C
  std::size_t local_epochs = 1;  // E
  std::size_t batch_size = 64;   // B
  std::size_t rounds = 50;       // T
  double local_eta = 0.05;
  double weight_decay = 0.004;
  Algorithm algorithm = Algorithm::fedavg;

  Weighting weighting = Weighting::uniform;
  double prox_lambda = 0.01;
  FedNovaConfig fednova;
  FedLblConfig fedlbl;
  DistillConfig distill;
  std::size_t peers = 3;  // Q
  MutualLossConfig mutual;

  std::vector<std::size_t> hidden = {16};
  DatasetConfig dataset;
  PartitionConfig partition;
  double validation_fraction = 0.2;

  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  bool parallel = false;

  /// Dataset, partition and model checks only (what the partition command needs).
  void validate_data() const;
  /// Everything, including validate_data().
  void validate() const;
};

struct RoundRecord {
  std::size_t round = 0;           // 1-based
  double test_accuracy = 0.0;      // NaN on rounds skipped by eval_every
  double test_loss = 0.0;
  double validation_accuracy = 0.0;
  std::vector<std::size_t> participants;  // ascending
  double wall_seconds = 0.0;
};

struct MetricsLog {
  Algorithm algorithm = Algorithm::fedavg;
  PartitionStrategy partition = PartitionStrategy::iid;
  std::uint64_t seed = 0;
  std::vector<RoundRecord> rounds;
};

/// Everything derived from the config before the first round.
struct Environment {
  ModelSpec spec;
  Dataset train_pool;
  Dataset test;
  PartitionMap partition;
  std::vector<Dataset> client_train;
  std::vector<Dataset> client_validation;
  std::vector<Matrix> distill_batches;
};

struct CentralState {
  ParamVector global;
};
struct PeerState {
  PeerStates models;
};
using SimState = std::variant<CentralState, PeerState>;

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Dataset generation, train/test split, partitioning and per-client
/// train/validation split.
Environment build_environment(const SimConfig& cfg);

/// Builds the configured partition over `data` (used by build_environment and
/// by the partition command). Feature noise returns the noisy data in `data`.
PartitionMap build_partition(const SimConfig& cfg, Dataset& data);

/// Generates the full (pre-split) dataset described by cfg.dataset.
Dataset build_dataset(const SimConfig& cfg);

/// Stratified split; round(test_fraction * n_c) samples of each class go to
/// the test set. Returns (train, test).
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction, std::uint64_t seed);

SimState initial_state(const SimConfig& cfg, const Environment& env);

std::size_t participants_per_round(std::size_t num_clients, double fraction);

/// floor(C * K) distinct ids, ascending, from a stream keyed on (seed, round).
std::vector<std::size_t> sample_clients(std::size_t num_clients, double fraction, std::size_t round,
                                        std::uint64_t master_seed);

/// Accuracy with ties to the lowest class index, mean cross-entropy.
Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& test);

RoundRecord run_round(const SimConfig& cfg, const Environment& env, SimState& state, std::size_t round);

MetricsLog run_simulation(const SimConfig& cfg);

}  // namespace fedsim
