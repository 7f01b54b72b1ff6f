#pragma once

// Synthetic datasets and the non-IID partitioning strategies: IID, label
// quantity, label Dirichlet, quantity Dirichlet, feature noise, symmetric
// cube octants and provenance sources.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedsim/nn.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct Dataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  /// Provenance group per sample; empty when the data has no sources.
  std::vector<std::size_t> source_ids;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }

  Dataset subset(std::span<const std::size_t> indices) const;
  Batch batch(std::span<const std::size_t> indices) const;
  Batch all() const;
  std::vector<std::size_t> label_histogram() const;
};

struct PartitionMap {
  std::vector<std::vector<std::size_t>> assignments;
  std::vector<std::size_t> sample_counts;           // n_k
  std::vector<std::vector<std::size_t>> label_sets;  // c_k, ascending

  std::size_t num_clients() const { return assignments.size(); }
};

/// Sorts each index set, fills n_k and c_k, and checks disjointness and
/// nonemptiness. Throws ConfigError on violation.
PartitionMap make_partition(const Dataset& data, std::vector<std::vector<std::size_t>> assignments);

// ---- generators -----------------------------------------------------------

/// One isotropic Gaussian cluster per class. Centers are drawn uniformly in
/// [-center_scale, center_scale]^dim.
Dataset gen_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                  std::uint64_t seed, double center_scale = 4.0);

/// Points uniform in [-scale, scale]^3, away from the axis planes, labelled by
/// octant: bit 0 = (x > 0), bit 1 = (y > 0), bit 2 = (z > 0).
Dataset gen_cube(std::size_t per_octant, double scale, std::uint64_t seed);

std::size_t octant_label(double x, double y, double z);

/// Assigns each sample to one of num_sources provenance groups and shifts its
/// features by a per-source offset drawn from N(0, shift^2).
Dataset with_sources(const Dataset& data, std::size_t num_sources, double shift, std::uint64_t seed);

// ---- Dirichlet helpers ----------------------------------------------------

/// Proportions ~ Dirichlet(beta * 1_k), from normalised Gamma(beta, 1) draws
/// (computed in log space so small beta does not underflow).
std::vector<double> sample_dirichlet(std::size_t k, double beta, Rng& rng);

/// Integer counts proportional to `proportions` summing exactly to `total`.
/// Remainders go to the largest fractional parts, lowest index first on ties.
std::vector<std::size_t> largest_remainder(std::span<const double> proportions, std::size_t total);

// ---- partitioners ---------------------------------------------------------

inline constexpr int kResampleBudget = 1000;

PartitionMap partition_iid(const Dataset& data, std::size_t num_clients, std::uint64_t seed);

PartitionMap partition_label_quantity(const Dataset& data, std::size_t num_clients,
                                      std::size_t labels_per_client, std::uint64_t seed);

PartitionMap partition_label_dirichlet(const Dataset& data, std::size_t num_clients, double beta,
                                       std::uint64_t seed);

PartitionMap partition_quantity_dirichlet(const Dataset& data, std::size_t num_clients, double beta,
                                          std::uint64_t seed);

/// Client k receives noise with sigma_k = sigma_max * k / (K - 1).
Dataset apply_feature_noise(const Dataset& data, const PartitionMap& partition, double sigma_max,
                            std::uint64_t seed);

/// Octant pairs {i, 7 - i} go to client i mod K. Clients holding more pairs
/// than others keep a random subset so every client ends up the same size.
PartitionMap partition_cube_symmetric(const Dataset& cube, std::size_t num_clients, std::uint64_t seed);

PartitionMap partition_by_source(const Dataset& data, std::size_t num_clients, std::uint64_t seed);

// ---- statistics and manifests --------------------------------------------

struct ClientSkew {
  std::size_t client = 0;
  std::size_t num_samples = 0;
  std::size_t num_labels = 0;
  std::vector<std::size_t> label_histogram;
  double feature_mean_distance = 0.0;
};

struct SkewReport {
  std::vector<ClientSkew> clients;
  double size_ratio = 1.0;  // max n_k / min n_k
};

SkewReport skew_report(const Dataset& data, const PartitionMap& partition);

/// Shannon entropy (nats) of a histogram; empty histograms have entropy 0.
double histogram_entropy(std::span<const std::size_t> histogram);

/// One line per client: "<id> <n_k> <h_0>,<h_1>,...,<h_{L-1}>".
void write_manifest(std::ostream& out, const SkewReport& report);

struct ManifestLine {
  std::size_t client = 0;
  std::size_t num_samples = 0;
  std::vector<std::size_t> histogram;
};
std::vector<ManifestLine> read_manifest(std::istream& in);

/// CSV table: client,n_k,num_labels,feature_mean_distance,histogram
void write_skew_table(std::ostream& out, const SkewReport& report);

}  // namespace fedsim
