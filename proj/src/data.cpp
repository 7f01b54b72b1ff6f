#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

constexpr double kPlaneBand = 1e-9;

std::vector<std::vector<std::size_t>> indices_by_label(const Dataset& data) {
  std::vector<std::vector<std::size_t>> by_label(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_label[data.labels[i]].push_back(i);
  return by_label;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void require_clients(std::size_t num_clients) {
  if (num_clients == 0) throw ConfigError("number of clients must be at least 1");
}

// Splits `items` into `parts` contiguous chunks whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> split_even(const std::vector<std::size_t>& items, std::size_t parts) {
  std::vector<std::vector<std::size_t>> out(parts);
  const std::size_t base = items.size() / parts;
  const std::size_t extra = items.size() % parts;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t take = base + (p < extra ? 1 : 0);
    out[p].assign(items.begin() + static_cast<std::ptrdiff_t>(pos),
                  items.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }
  return out;
}

bool all_nonempty(const std::vector<std::vector<std::size_t>>& sets) {
  return std::all_of(sets.begin(), sets.end(), [](const auto& s) { return !s.empty(); });
}

}  // namespace

// ---- Dataset ----------------------------------------------------------------

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features = Matrix(indices.size(), dim());
  out.labels.reserve(indices.size());
  if (!source_ids.empty()) out.source_ids.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw ConfigError("sample index " + std::to_string(i) + " out of range");
    std::copy(features.row(i).begin(), features.row(i).end(), out.features.row(r).begin());
    out.labels.push_back(labels[i]);
    if (!source_ids.empty()) out.source_ids.push_back(source_ids[i]);
  }
  return out;
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch b;
  b.features = Matrix(indices.size(), dim());
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    std::copy(features.row(i).begin(), features.row(i).end(), b.features.row(r).begin());
    b.labels.push_back(labels[i]);
  }
  return b;
}

Batch Dataset::all() const { return Batch{features, labels}; }

std::vector<std::size_t> Dataset::label_histogram() const {
  std::vector<std::size_t> h(num_classes, 0);
  for (std::size_t y : labels) ++h[y];
  return h;
}

PartitionMap make_partition(const Dataset& data, std::vector<std::vector<std::size_t>> assignments) {
  PartitionMap map;
  std::vector<char> seen(data.size(), 0);
  for (std::size_t k = 0; k < assignments.size(); ++k) {
    auto& set = assignments[k];
    if (set.empty()) throw ConfigError("client " + std::to_string(k) + " received no samples");
    std::sort(set.begin(), set.end());
    std::set<std::size_t> labels;
    for (std::size_t i : set) {
      if (i >= data.size()) throw ConfigError("partition index out of range");
      if (seen[i]) throw ConfigError("sample " + std::to_string(i) + " assigned to two clients");
      seen[i] = 1;
      labels.insert(data.labels[i]);
    }
    map.sample_counts.push_back(set.size());
    map.label_sets.emplace_back(labels.begin(), labels.end());
  }
  map.assignments = std::move(assignments);
  return map;
}

// ---- generators -------------------------------------------------------------

Dataset gen_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread,
                  std::uint64_t seed, double center_scale) {
  if (num_classes < 2) throw ConfigError("gen_blobs: need at least 2 classes");
  if (per_class < 1) throw ConfigError("gen_blobs: per_class must be at least 1");
  if (dim < 1) throw ConfigError("gen_blobs: dim must be at least 1");
  if (!(spread >= 0.0)) throw ConfigError("gen_blobs: spread must be nonnegative");

  Rng rng = make_rng(seed, {tag(Stream::dataset)});
  std::uniform_real_distribution<double> center_dist(-center_scale, center_scale);
  Matrix centers(num_classes, dim);
  for (double& c : centers.data) c = center_dist(rng);

  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset out;
  out.num_classes = num_classes;
  out.features = Matrix(num_classes * per_class, dim);
  out.labels.reserve(num_classes * per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++r) {
      for (std::size_t d = 0; d < dim; ++d) out.features(r, d) = centers(c, d) + spread * noise(rng);
      out.labels.push_back(c);
    }
  }
  return out;
}

std::size_t octant_label(double x, double y, double z) {
  return (x > 0.0 ? 1u : 0u) | (y > 0.0 ? 2u : 0u) | (z > 0.0 ? 4u : 0u);
}

Dataset gen_cube(std::size_t per_octant, double scale, std::uint64_t seed) {
  if (per_octant < 1) throw ConfigError("gen_cube: per_octant must be at least 1");
  if (!(scale > kPlaneBand)) throw ConfigError("gen_cube: scale must be positive");

  Rng rng = make_rng(seed, {tag(Stream::dataset)});
  std::uniform_real_distribution<double> magnitude(0.0, scale);
  Dataset out;
  out.num_classes = 8;
  out.features = Matrix(8 * per_octant, 3);
  out.labels.reserve(8 * per_octant);
  std::size_t r = 0;
  for (std::size_t octant = 0; octant < 8; ++octant) {
    for (std::size_t i = 0; i < per_octant; ++i, ++r) {
      for (std::size_t axis = 0; axis < 3; ++axis) {
        double m = 0.0;
        do {
          m = magnitude(rng);
        } while (m <= kPlaneBand);
        out.features(r, axis) = (octant >> axis) & 1u ? m : -m;
      }
      out.labels.push_back(octant);
    }
  }
  return out;
}

Dataset with_sources(const Dataset& data, std::size_t num_sources, double shift, std::uint64_t seed) {
  if (num_sources < 1) throw ConfigError("with_sources: need at least one source");
  Rng rng = make_rng(seed, {tag(Stream::dataset), 1});
  std::normal_distribution<double> offset_dist(0.0, 1.0);
  Matrix offsets(num_sources, data.dim());
  for (double& v : offsets.data) v = shift * offset_dist(rng);

  Dataset out = data;
  out.source_ids.resize(data.size());
  std::uniform_int_distribution<std::size_t> pick(0, num_sources - 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t s = pick(rng);
    out.source_ids[i] = s;
    for (std::size_t d = 0; d < data.dim(); ++d) out.features(i, d) += offsets(s, d);
  }
  return out;
}

// ---- Dirichlet --------------------------------------------------------------

std::vector<double> sample_dirichlet(std::size_t k, double beta, Rng& rng) {
  if (!(beta > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
  std::vector<double> log_g(k);
  if (beta >= 1.0) {
    std::gamma_distribution<double> gamma(beta, 1.0);
    for (double& v : log_g) v = std::log(gamma(rng));
  } else {
    // Gamma(b) = Gamma(b + 1) * U^(1/b)
    std::gamma_distribution<double> gamma(beta + 1.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (double& v : log_g) {
      double u = 0.0;
      do {
        u = uniform(rng);
      } while (u <= 0.0);
      v = std::log(gamma(rng)) + std::log(u) / beta;
    }
  }
  const double m = *std::max_element(log_g.begin(), log_g.end());
  double sum = 0.0;
  std::vector<double> p(k);
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::exp(log_g[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<std::size_t> largest_remainder(std::span<const double> proportions, std::size_t total) {
  const std::size_t k = proportions.size();
  if (k == 0) throw ConfigError("largest_remainder: no proportions");
  double sum = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0)) throw ConfigError("largest_remainder: proportions must be nonnegative");
    sum += p;
  }
  if (!(sum > 0.0)) throw ConfigError("largest_remainder: proportions sum to zero");

  std::vector<std::size_t> counts(k);
  std::vector<double> frac(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = proportions[i] / sum * static_cast<double>(total);
    const double fl = std::floor(exact);
    counts[i] = static_cast<std::size_t>(fl);
    frac[i] = exact - fl;
    assigned += counts[i];
  }
  // Floating error can push the floor sum past the total; trim from the smallest remainders.
  while (assigned > total) {
    std::size_t victim = k;
    for (std::size_t i = 0; i < k; ++i) {
      if (counts[i] > 0 && (victim == k || frac[i] < frac[victim])) victim = i;
    }
    --counts[victim];
    frac[victim] += 1.0;
    --assigned;
  }
  std::vector<std::size_t> order = iota_indices(k);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) ++counts[order[j % k]];
  return counts;
}

// ---- partitioners -----------------------------------------------------------

PartitionMap partition_iid(const Dataset& data, std::size_t num_clients, std::uint64_t seed) {
  require_clients(num_clients);
  if (data.size() < num_clients) {
    throw ConfigError("partition_iid: " + std::to_string(data.size()) + " samples cannot cover " +
                      std::to_string(num_clients) + " clients");
  }
  Rng rng = make_rng(seed, {tag(Stream::partition)});
  std::vector<std::size_t> idx = iota_indices(data.size());
  std::shuffle(idx.begin(), idx.end(), rng);
  return make_partition(data, split_even(idx, num_clients));
}

PartitionMap partition_label_quantity(const Dataset& data, std::size_t num_clients,
                                      std::size_t labels_per_client, std::uint64_t seed) {
  require_clients(num_clients);
  const std::size_t L = data.num_classes;
  if (labels_per_client < 1 || labels_per_client > L) {
    throw ConfigError("labels_per_client must be in [1, " + std::to_string(L) + "]");
  }
  if (num_clients * labels_per_client < L) {
    throw ConfigError("label_quantity: " + std::to_string(num_clients) + " clients with " +
                      std::to_string(labels_per_client) + " labels each cannot cover " +
                      std::to_string(L) + " labels");
  }
  const auto by_label = indices_by_label(data);
  Rng rng = make_rng(seed, {tag(Stream::partition)});

  for (int attempt = 0; attempt < kResampleBudget; ++attempt) {
    // Client k's first label walks a random permutation, so K >= L always
    // covers every label; the rest are drawn uniformly without replacement.
    std::vector<std::size_t> perm = iota_indices(L);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> owners(L);
    for (std::size_t k = 0; k < num_clients; ++k) {
      const std::size_t first = perm[k % L];
      std::vector<std::size_t> rest;
      for (std::size_t l = 0; l < L; ++l) {
        if (l != first) rest.push_back(l);
      }
      std::shuffle(rest.begin(), rest.end(), rng);
      owners[first].push_back(k);
      for (std::size_t j = 0; j + 1 < labels_per_client; ++j) owners[rest[j]].push_back(k);
    }

    bool feasible = true;
    for (std::size_t l = 0; l < L && feasible; ++l) {
      feasible = !owners[l].empty() && by_label[l].size() >= owners[l].size();
    }
    if (!feasible) continue;

    std::vector<std::vector<std::size_t>> assignments(num_clients);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<std::size_t> idx = by_label[l];
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<std::size_t> label_owners = owners[l];
      std::shuffle(label_owners.begin(), label_owners.end(), rng);
      auto shares = split_even(idx, label_owners.size());
      for (std::size_t j = 0; j < label_owners.size(); ++j) {
        auto& dst = assignments[label_owners[j]];
        dst.insert(dst.end(), shares[j].begin(), shares[j].end());
      }
    }
    return make_partition(data, std::move(assignments));
  }
  throw ConfigError("label_quantity: no assignment covering every label within " +
                    std::to_string(kResampleBudget) + " attempts");
}

PartitionMap partition_label_dirichlet(const Dataset& data, std::size_t num_clients, double beta,
                                       std::uint64_t seed) {
  require_clients(num_clients);
  if (!(beta > 0.0)) throw ConfigError("label_dirichlet: beta must be positive");
  const auto by_label = indices_by_label(data);
  Rng rng = make_rng(seed, {tag(Stream::partition)});

  for (int attempt = 0; attempt < kResampleBudget; ++attempt) {
    std::vector<std::vector<std::size_t>> assignments(num_clients);
    for (std::size_t l = 0; l < data.num_classes; ++l) {
      const auto p = sample_dirichlet(num_clients, beta, rng);
      const auto counts = largest_remainder(p, by_label[l].size());
      std::vector<std::size_t> idx = by_label[l];
      std::shuffle(idx.begin(), idx.end(), rng);
      std::size_t pos = 0;
      for (std::size_t k = 0; k < num_clients; ++k) {
        assignments[k].insert(assignments[k].end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                              idx.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
        pos += counts[k];
      }
    }
    if (all_nonempty(assignments)) return make_partition(data, std::move(assignments));
  }
  throw ConfigError("label_dirichlet: every draw left some client empty after " +
                    std::to_string(kResampleBudget) + " attempts");
}

PartitionMap partition_quantity_dirichlet(const Dataset& data, std::size_t num_clients, double beta,
                                          std::uint64_t seed) {
  require_clients(num_clients);
  if (!(beta > 0.0)) throw ConfigError("quantity_dirichlet: beta must be positive");
  if (data.size() < num_clients) throw ConfigError("quantity_dirichlet: fewer samples than clients");
  Rng rng = make_rng(seed, {tag(Stream::partition)});

  for (int attempt = 0; attempt < kResampleBudget; ++attempt) {
    const auto p = sample_dirichlet(num_clients, beta, rng);
    const auto sizes = largest_remainder(p, data.size());
    if (std::find(sizes.begin(), sizes.end(), std::size_t{0}) != sizes.end()) continue;

    std::vector<std::size_t> idx = iota_indices(data.size());
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<std::size_t>> assignments(num_clients);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      assignments[k].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                            idx.begin() + static_cast<std::ptrdiff_t>(pos + sizes[k]));
      pos += sizes[k];
    }
    return make_partition(data, std::move(assignments));
  }
  throw ConfigError("quantity_dirichlet: every draw left some client empty after " +
                    std::to_string(kResampleBudget) + " attempts");
}

Dataset apply_feature_noise(const Dataset& data, const PartitionMap& partition, double sigma_max,
                            std::uint64_t seed) {
  if (!(sigma_max >= 0.0)) throw ConfigError("sigma_max must be nonnegative");
  Dataset out = data;
  const std::size_t K = partition.num_clients();
  for (std::size_t k = 0; k < K; ++k) {
    const double sigma = K > 1 ? sigma_max * static_cast<double>(k) / static_cast<double>(K - 1) : 0.0;
    if (sigma == 0.0) continue;
    Rng rng = make_rng(seed, {tag(Stream::noise), k});
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t i : partition.assignments[k]) {
      for (double& v : out.features.row(i)) v += noise(rng);
    }
  }
  return out;
}

PartitionMap partition_cube_symmetric(const Dataset& cube, std::size_t num_clients, std::uint64_t seed) {
  require_clients(num_clients);
  if (cube.num_classes != 8) throw ConfigError("cube partition needs the 8-octant dataset");
  if (num_clients > 4) {
    throw ConfigError("cube partition supports at most 4 clients (only 4 symmetric octant pairs), got " +
                      std::to_string(num_clients));
  }
  std::vector<std::vector<std::size_t>> pools(num_clients);
  for (std::size_t i = 0; i < cube.size(); ++i) {
    const std::size_t octant = cube.labels[i];
    const std::size_t pair = std::min(octant, 7 - octant);
    pools[pair % num_clients].push_back(i);
  }
  std::size_t target = cube.size();
  for (const auto& p : pools) target = std::min(target, p.size());

  Rng rng = make_rng(seed, {tag(Stream::partition)});
  for (auto& p : pools) {
    if (p.size() > target) {
      std::shuffle(p.begin(), p.end(), rng);
      p.resize(target);
    }
  }
  return make_partition(cube, std::move(pools));
}

PartitionMap partition_by_source(const Dataset& data, std::size_t num_clients, std::uint64_t seed) {
  require_clients(num_clients);
  if (data.source_ids.size() != data.size()) throw ConfigError("source partition needs per-sample source ids");
  std::set<std::size_t> distinct(data.source_ids.begin(), data.source_ids.end());
  if (distinct.size() < num_clients) {
    throw ConfigError("source partition: " + std::to_string(distinct.size()) + " distinct sources for " +
                      std::to_string(num_clients) + " clients");
  }
  std::vector<std::size_t> order(distinct.begin(), distinct.end());
  Rng rng = make_rng(seed, {tag(Stream::partition)});
  std::shuffle(order.begin(), order.end(), rng);
  std::map<std::size_t, std::size_t> owner;
  for (std::size_t j = 0; j < order.size(); ++j) owner[order[j]] = j % num_clients;

  std::vector<std::vector<std::size_t>> assignments(num_clients);
  for (std::size_t i = 0; i < data.size(); ++i) assignments[owner[data.source_ids[i]]].push_back(i);
  return make_partition(data, std::move(assignments));
}

// ---- statistics -------------------------------------------------------------

SkewReport skew_report(const Dataset& data, const PartitionMap& partition) {
  const std::size_t dim = data.dim();
  std::vector<double> global_mean(dim, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) global_mean[d] += data.features(i, d);
  }
  for (double& v : global_mean) v /= static_cast<double>(data.size());

  SkewReport report;
  std::size_t min_n = 0, max_n = 0;
  for (std::size_t k = 0; k < partition.num_clients(); ++k) {
    const auto& idx = partition.assignments[k];
    ClientSkew c;
    c.client = k;
    c.num_samples = idx.size();
    c.label_histogram.assign(data.num_classes, 0);
    std::vector<double> mean(dim, 0.0);
    for (std::size_t i : idx) {
      ++c.label_histogram[data.labels[i]];
      for (std::size_t d = 0; d < dim; ++d) mean[d] += data.features(i, d);
    }
    double dist2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = mean[d] / static_cast<double>(idx.size()) - global_mean[d];
      dist2 += diff * diff;
    }
    c.feature_mean_distance = std::sqrt(dist2);
    c.num_labels = static_cast<std::size_t>(
        std::count_if(c.label_histogram.begin(), c.label_histogram.end(), [](std::size_t h) { return h > 0; }));
    min_n = k == 0 ? c.num_samples : std::min(min_n, c.num_samples);
    max_n = std::max(max_n, c.num_samples);
    report.clients.push_back(std::move(c));
  }
  report.size_ratio = min_n > 0 ? static_cast<double>(max_n) / static_cast<double>(min_n) : 0.0;
  return report;
}

double histogram_entropy(std::span<const std::size_t> histogram) {
  double total = 0.0;
  for (std::size_t h : histogram) total += static_cast<double>(h);
  if (total == 0.0) return 0.0;
  double e = 0.0;
  for (std::size_t h : histogram) {
    if (h == 0) continue;
    const double p = static_cast<double>(h) / total;
    e -= p * std::log(p);
  }
  return e;
}

void write_manifest(std::ostream& out, const SkewReport& report) {
  for (const auto& c : report.clients) {
    out << c.client << ' ' << c.num_samples << ' ';
    for (std::size_t j = 0; j < c.label_histogram.size(); ++j) {
      if (j) out << ',';
      out << c.label_histogram[j];
    }
    out << '\n';
  }
}

std::vector<ManifestLine> read_manifest(std::istream& in) {
  std::vector<ManifestLine> lines;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    std::istringstream ss(text);
    ManifestLine m;
    std::string hist;
    if (!(ss >> m.client >> m.num_samples >> hist)) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": expected '<id> <n_k> <histogram>'");
    }
    std::istringstream hs(hist);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      try {
        std::size_t used = 0;
        m.histogram.push_back(std::stoul(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError("manifest line " + std::to_string(line_no) + ": bad histogram entry '" + cell + "'");
      }
    }
    lines.push_back(std::move(m));
  }
  return lines;
}

void write_skew_table(std::ostream& out, const SkewReport& report) {
  out << "client,n_k,num_labels,feature_mean_distance,label_histogram\n";
  for (const auto& c : report.clients) {
    out << c.client << ',' << c.num_samples << ',' << c.num_labels << ',' << c.feature_mean_distance << ',';
    for (std::size_t j = 0; j < c.label_histogram.size(); ++j) {
      if (j) out << ' ';
      out << c.label_histogram[j];
    }
    out << '\n';
  }
  out << "# size_ratio=" << report.size_ratio << '\n';
}

}  // namespace fedsim
