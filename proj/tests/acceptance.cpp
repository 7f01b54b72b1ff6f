// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fedsim/decentralized.hpp"
#include "fedsim/fedalgos.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/simulator.hpp"
#include "oracles.hpp"
#include "partition_checks.hpp"

using namespace fedsim;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << "criterion " << std::setw(2) << id << " " << (pass ? "PASS" : "FAIL") << "  " << name << "  ("
            << detail << ")" << std::endl;
  if (!pass) ++failures;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// ---- 1 -----------------------------------------------------------------------

void gradient_integrity() {
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> normal(0.0, 0.5);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto c = oracle::random_case(rng, 200);
    const Batch batch{c.features, c.labels};
    ParamVector other = c.params;
    for (auto& v : other) v += normal(rng);
    const Matrix target = oracle::random_probs(rng, c.features.rows, c.spec.num_classes());
    const Matrix partner = softmax_rows(forward(c.spec, other, c.features));
    const double lambda = 0.4;

    auto check = [&](const ParamVector& analytic, const std::function<double(const ParamVector&)>& f) {
      worst = std::max(worst, oracle::max_relative_error(analytic, oracle::central_difference(f, c.params)));
    };
    for (bool mse : {false, true}) {
      check(grad(c.spec, c.params, batch, mse ? LossKind::mse_onehot : LossKind::cross_entropy),
            [&](const ParamVector& p) { return oracle::data_loss(c.spec, p, c.features, c.labels, mse); });
    }
    check(fedprox_gradient(c.spec, c.params, other, lambda, batch), [&](const ParamVector& p) {
      double prox = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) prox += (p[i] - other[i]) * (p[i] - other[i]);
      return oracle::data_loss(c.spec, p, c.features, c.labels, false) + 0.5 * lambda * prox;
    });
    check(kl_to_target_grad(c.spec, c.params, c.features, target),
          [&](const ParamVector& p) { return oracle::kl_to_target(c.spec, p, c.features, target); });
    check(mutual_loss_grad(c.spec, c.params, batch, partner, MutualLossConfig{}), [&](const ParamVector& p) {
      return oracle::data_loss(c.spec, p, c.features, c.labels, true) + oracle::kl_to_target(c.spec, p, c.features, partner);
    });
  }
  report(1, "gradient integrity", worst < 1e-4,
         "100 cases x {ce, mse, proximal, distillation kl, mutual}; worst relative error " + fmt(worst, 3));
}

// ---- 2 -----------------------------------------------------------------------

SimConfig desk_config(Algorithm a, std::uint64_t seed) {
  SimConfig cfg;
  cfg.algorithm = a;
  cfg.clients = 16;
  cfg.participation = 0.25;
  cfg.local_epochs = 1;
  cfg.rounds = 50;
  cfg.batch_size = 10;
  cfg.local_eta = 0.1;
  cfg.dataset.classes = 8;
  cfg.dataset.per_class = 250;
  cfg.peers = 3;
  cfg.seed = seed;
  return cfg;
}

SimConfig label_skew(SimConfig cfg) {
  cfg.partition.strategy = PartitionStrategy::label_quantity;
  cfg.partition.labels_per_client = 1;
  return cfg;
}

std::string metrics_bytes(const MetricsLog& log) {
  std::ostringstream os;
  write_metrics(os, std::span<const MetricsLog>(&log, 1));
  return os.str();
}

bool same_numbers(const MetricsLog& a, const MetricsLog& b) {
  if (a.rounds.size() != b.rounds.size()) return false;
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    const auto &x = a.rounds[i], &y = b.rounds[i];
    if (std::memcmp(&x.test_accuracy, &y.test_accuracy, sizeof(double)) != 0 ||
        std::memcmp(&x.test_loss, &y.test_loss, sizeof(double)) != 0 || x.participants != y.participants) {
      return false;
    }
  }
  return true;
}

void exact_reductions() {
  bool prox_ok = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (bool skew : {false, true}) {
      SimConfig avg = desk_config(Algorithm::fedavg, seed);
      avg.rounds = 15;
      if (skew) avg = label_skew(avg);
      SimConfig prox = avg;
      prox.algorithm = Algorithm::fedprox;
      prox.prox_lambda = 0.0;
      prox_ok = prox_ok && same_numbers(run_simulation(avg), run_simulation(prox));
    }
  }
  bool feddf_ok = true;
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    const auto c = oracle::random_case(rng);
    const std::vector<ParamVector> teacher = {c.params};
    const std::vector<Matrix> batches = {c.features};
    feddf_ok = feddf_ok && feddf_fuse(c.spec, teacher, c.params, batches, 0.1, 25) == c.params;
  }
  report(2, "exact reductions", prox_ok && feddf_ok,
         std::string("fedprox(lambda=0) vs fedavg bitwise on 6 logs: ") + (prox_ok ? "identical" : "DIFFER") +
             "; feddf single teacher = student on 100 cases: " + (feddf_ok ? "identity" : "CHANGED"));
}

// ---- 3 -----------------------------------------------------------------------

void aggregation_oracles() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_int_distribution<std::size_t> len_dist(1, 8), k_dist(1, 6), n_dist(1, 40), labels_dist(1, 5),
      thr_dist(1, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0, worst_sum = 0.0;
  std::set<int> group_cases;

  for (int t = 0; t < 1000; ++t) {
    const std::size_t len = len_dist(rng), k = k_dist(rng);
    std::vector<ClientUpdate> ups(k);
    double n = 0.0;
    for (auto& u : ups) {
      u.params.resize(len);
      for (auto& v : u.params) v = normal(rng);
      u.delta = u.params;
      u.num_samples = n_dist(rng);
      u.num_labels = labels_dist(rng);
      u.local_steps = 1;
      n += static_cast<double>(u.num_samples);
    }
    for (auto mode : {Weighting::uniform, Weighting::by_samples}) {
      const auto got = fedavg_aggregate(ups, mode);
      for (std::size_t i = 0; i < len; ++i) {
        double want = 0.0;
        for (const auto& u : ups) {
          want += (mode == Weighting::uniform ? 1.0 / static_cast<double>(k) : static_cast<double>(u.num_samples) / n) *
                  u.params[i];
        }
        worst = std::max(worst, std::abs(got[i] - want));
      }
    }

    FedLblConfig cfg{unit(rng), unit(rng), thr_dist(rng)};
    std::size_t m = 0, z = 0;
    for (const auto& u : ups) (u.num_labels >= cfg.label_threshold ? m : z) += 1;
    group_cases.insert((m > 0 ? 1 : 0) + (z > 0 ? 2 : 0));
    const double nu = z == 0 ? 1.0 : (m == 0 ? 0.0 : cfg.nu);
    std::vector<double> lam;
    for (const auto& u : ups) {
      const double base = (1 - cfg.alpha) * static_cast<double>(u.num_samples) / n;
      lam.push_back(u.num_labels >= cfg.label_threshold ? base + cfg.alpha * nu / static_cast<double>(m)
                                                        : base + cfg.alpha * (1 - nu) / static_cast<double>(z));
    }
    const auto w = fedlbl_weights(ups, cfg);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
    const auto got = fedlbl_aggregate(ups, cfg);
    for (std::size_t i = 0; i < len; ++i) {
      double want = 0.0;
      for (std::size_t j = 0; j < k; ++j) want += lam[j] * ups[j].params[i];
      worst = std::max(worst, std::abs(got[i] - want));
    }
  }

  // Peer rounds: tiny models and data so 1000 rounds stay cheap.
  const ModelSpec spec{{2, 3}};
  PeerRoundConfig pcfg;
  pcfg.sender = LocalTrainOptions{1, 4, 0.1, 0.004, LossKind::mse_onehot};
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 2 + static_cast<std::size_t>(t % 5);
    PeerStates states(k, ParamVector(spec.param_count()));
    std::vector<Dataset> data;
    for (std::size_t i = 0; i < k; ++i) {
      for (auto& v : states[i]) v = normal(rng);
      data.push_back(gen_blobs(3, 2, 2, 0.5, static_cast<std::uint64_t>(t) * 10 + i));
    }
    pcfg.master_seed = static_cast<std::uint64_t>(t);
    Rng plan_rng(static_cast<std::uint64_t>(t));
    const auto plan = plan_peer_round(k, 1 + (k >= 4 ? static_cast<std::size_t>(t % 2) : 0), plan_rng);
    const auto full = fullavg_round(spec, states, plan, data, pcfg, 1);
    const auto combo = combo_round(spec, states, plan, data, pcfg, 1);
    for (std::size_t i = 0; i < plan.senders.size(); ++i) {
      const std::size_t s = plan.senders[i], r = plan.receivers[i];
      Rng srng = make_rng(pcfg.master_seed, {tag(Stream::client_training), s, 1});
      const auto trained = local_train(spec, states[s], data[s], pcfg.sender, std::nullopt, srng).params;
      const std::size_t half = trained.size() / 2;
      for (std::size_t j = 0; j < trained.size(); ++j) {
        worst = std::max(worst, std::abs(full[s][j] - trained[j]));
        worst = std::max(worst, std::abs(full[r][j] - 0.5 * (trained[j] + states[r][j])));
        const double sender_want = j < half ? 0.5 * (trained[j] + states[r][j]) : trained[j];
        const double receiver_want = j < half ? states[r][j] : 0.5 * (states[r][j] + trained[j]);
        worst = std::max(worst, std::abs(combo[s][j] - sender_want));
        worst = std::max(worst, std::abs(combo[r][j] - receiver_want));
      }
    }
  }
  const bool pass = worst <= 1e-12 && worst_sum <= 1e-9 && group_cases.size() == 3;
  report(3, "aggregation oracles", pass,
         "1000 cases each for fedavg, fedlbl, fullavg_round, combo_round; worst abs error " + fmt(worst, 3) +
             "; worst |sum(lambda) - 1| " + fmt(worst_sum, 3) + "; group configurations seen " +
             std::to_string(group_cases.size()) + "/3");
}

// ---- 4 -----------------------------------------------------------------------

void fednova_formula() {
  bool exact = true;
  int floor_hits = 0, sqrt_hits = 0;
  for (double alpha : {0.01, 0.1, 1.0, 2.5}) {
    for (double beta : {0.1, 0.5, 1.0, 3.0}) {
      for (double d_ref : {0.25, 1.0, 4.0}) {
        for (double d : {0.0, 1e-6, 0.01, 0.25, 1.0, 2.0, 4.0, 9.0, 100.0}) {
          const double ratio = std::sqrt(d / d_ref);
          const double want = ratio > beta ? alpha * ratio : alpha * beta;
          (ratio > beta ? sqrt_hits : floor_hits) += 1;
          exact = exact && fednova_lr(d, FedNovaConfig{alpha, beta, d_ref}) == want;
        }
      }
    }
  }
  // Hand values: ratio 1 above the floor, sqrt(4) = 2, and the floor.
  const FedNovaConfig cfg{0.1, 0.5, 1.0};
  exact = exact && fednova_lr(1.0, cfg) == 0.1 * 1.0 && fednova_lr(4.0, cfg) == 0.1 * 2.0 && fednova_lr(0.0, cfg) == 0.1 * 0.5;
  report(4, "fednova formula", exact && floor_hits > 0 && sqrt_hits > 0,
         "432-point grid, " + std::to_string(floor_hits) + " floor-branch and " + std::to_string(sqrt_hits) +
             " sqrt-branch points, exact equality required");
}

// ---- 5 -----------------------------------------------------------------------

void partitioner_invariants() {
  int checked = 0;
  std::string first_violation;
  auto note = [&](const std::string& strategy, std::uint64_t seed, const std::string& v) {
    ++checked;
    if (!v.empty() && first_violation.empty()) first_violation = strategy + " seed " + std::to_string(seed) + ": " + v;
  };
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t classes = 2 + seed % 7;
    const Dataset d = gen_blobs(classes, 20 + seed % 31, 2, 0.5, seed);
    const std::size_t k = 1 + seed % 9;

    note("iid", seed, checks::partition_violation(d, partition_iid(d, k, seed), true));

    const std::size_t q = std::max<std::size_t>(1 + seed % classes, (classes + k - 1) / k);
    const auto lq = partition_label_quantity(d, k, std::min(q, classes), seed);
    std::string v = checks::partition_violation(d, lq, true);
    for (const auto& c : lq.label_sets) {
      if (v.empty() && c.size() != std::min(q, classes)) v = "|c_k| differs from labels_per_client";
    }
    note("label_quantity", seed, v);

    // Very small beta with few samples per client can exhaust the resampling
    // budget, which is a configuration error rather than a bad map.
    const double beta = 0.5 * std::pow(10.0, static_cast<double>(seed % 4));
    const auto ld = partition_label_dirichlet(d, k, beta, seed);
    v = checks::partition_violation(d, ld, true);
    if (v.empty() && std::accumulate(ld.sample_counts.begin(), ld.sample_counts.end(), std::size_t{0}) != d.size()) {
      v = "label dirichlet counts not conserved";
    }
    note("label_dirichlet", seed, v);

    const auto qd = partition_quantity_dirichlet(d, k, beta, seed);
    v = checks::partition_violation(d, qd, true);
    if (v.empty() && std::accumulate(qd.sample_counts.begin(), qd.sample_counts.end(), std::size_t{0}) != d.size()) {
      v = "quantity dirichlet counts not conserved";
    }
    note("quantity_dirichlet", seed, v);

    const auto iid = partition_iid(d, k, seed);
    const Dataset noisy = apply_feature_noise(d, iid, 0.5, seed);
    v = checks::partition_violation(noisy, iid, true);
    if (v.empty() && (noisy.labels != d.labels || noisy.features.rows != d.features.rows)) v = "noise changed shape";
    note("feature_noise", seed, v);

    const Dataset cube = gen_cube(5 + seed % 11, 1.0, seed);
    const std::size_t kc = 1 + seed % 4;
    const auto cm = partition_cube_symmetric(cube, kc, seed);
    v = checks::partition_violation(cube, cm, kc == 1 || kc == 2 || kc == 4);
    for (std::size_t c = 0; c < kc && v.empty(); ++c) {
      for (std::size_t i : cm.assignments[c]) {
        if (std::min(cube.labels[i], 7 - cube.labels[i]) % kc != c) v = "sample outside its symmetric pair";
      }
    }
    note("cube", seed, v);

    const Dataset sourced = with_sources(d, k + seed % 4, 0.3, seed);
    const auto sp = partition_by_source(sourced, k, seed);
    v = checks::partition_violation(sourced, sp, true);
    std::vector<int> owner(k + seed % 4, -1);
    for (std::size_t c = 0; c < k && v.empty(); ++c) {
      for (std::size_t i : sp.assignments[c]) {
        int& o = owner[sourced.source_ids[i]];
        if (o != -1 && o != static_cast<int>(c)) v = "source shared by two clients";
        o = static_cast<int>(c);
      }
    }
    note("source", seed, v);
    (void)rng;
  }
  report(5, "partitioner invariants", first_violation.empty(),
         std::to_string(checked) + " instances (200 per strategy x 7 strategies)" +
             (first_violation.empty() ? "" : "; first violation: " + first_violation));
}

// ---- 6 -----------------------------------------------------------------------

void dirichlet_concentration() {
  const Dataset d = gen_blobs(10, 1000, 2, 0.5, 1);
  const auto global = d.label_histogram();
  double worst_dev = 0.0;
  int entropy_wins = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto mean_entropy = [&](double beta) {
      const auto map = partition_label_dirichlet(d, 10, beta, seed);
      double e = 0.0;
      for (std::size_t k = 0; k < 10; ++k) {
        std::vector<std::size_t> h(10, 0);
        for (std::size_t i : map.assignments[k]) ++h[d.labels[i]];
        e += histogram_entropy(h);
        if (beta > 1000.0) {
          for (std::size_t c = 0; c < 10; ++c) {
            const double p = static_cast<double>(h[c]) / static_cast<double>(map.sample_counts[k]);
            const double g = static_cast<double>(global[c]) / static_cast<double>(d.size());
            worst_dev = std::max(worst_dev, std::abs(p - g) / g);
          }
        }
      }
      return e / 10.0;
    };
    const double flat = mean_entropy(10000.0);
    const double skew = mean_entropy(0.1);
    entropy_wins += skew < flat;
  }
  report(6, "dirichlet concentration", worst_dev < 0.05 && entropy_wins == 20,
         "n=10000, K=10, 20 seeds; beta=10000 worst relative histogram deviation " + fmt(worst_dev, 3) +
             "; beta=0.1 lower mean entropy in " + std::to_string(entropy_wins) + "/20 seeds");
}

// ---- 7-9 ---------------------------------------------------------------------

struct SeriesStats {
  double final_accuracy;
  double oscillation;
};

SeriesStats stats(const MetricsLog& log) {
  std::vector<double> acc;
  for (const auto& r : log.rounds) acc.push_back(r.test_accuracy);
  return {acc.back(), oscillation(acc)};
}

struct Averages {
  double final_accuracy = 0.0;
  double oscillation = 0.0;
};

Averages average_over_seeds(Algorithm a, bool skew, double lambda = 0.0) {
  std::vector<double> fin, osc;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SimConfig cfg = desk_config(a, seed);
    if (skew) cfg = label_skew(cfg);
    cfg.prox_lambda = lambda;
    const auto s = stats(run_simulation(cfg));
    fin.push_back(s.final_accuracy);
    osc.push_back(s.oscillation);
  }
  return {mean(fin), mean(osc)};
}

void qualitative_findings() {
  const Averages iid = average_over_seeds(Algorithm::fedavg, false);
  const Averages skew = average_over_seeds(Algorithm::fedavg, true);
  const double drop = iid.final_accuracy - skew.final_accuracy;
  const double ratio = skew.oscillation / iid.oscillation;
  report(7, "non-iid degradation", drop >= 0.10 && ratio >= 2.0,
         "fedavg final accuracy iid " + fmt(iid.final_accuracy) + " vs one-label-per-client " +
             fmt(skew.final_accuracy) + " (drop " + fmt(drop) + ", need >= 0.10); last-20% std " +
             fmt(iid.oscillation) + " vs " + fmt(skew.oscillation) + " (ratio " + fmt(ratio) + ", need >= 2)");

  const Averages prox_iid = average_over_seeds(Algorithm::fedprox, false, 0.1);
  const Averages prox_skew = average_over_seeds(Algorithm::fedprox, true, 0.1);
  const bool prox_ok = prox_iid.final_accuracy >= iid.final_accuracy - 0.02 &&
                       prox_skew.final_accuracy >= skew.final_accuracy - 0.02;
  report(8, "fedprox non-inferiority", prox_ok,
         "lambda=0.1 mean final accuracy iid " + fmt(prox_iid.final_accuracy) + " vs fedavg " +
             fmt(iid.final_accuracy) + "; label skew " + fmt(prox_skew.final_accuracy) + " vs fedavg " +
             fmt(skew.final_accuracy) + "; bound fedavg - 0.02");

  const Averages defkt = average_over_seeds(Algorithm::defkt, true);
  const Averages fullavg = average_over_seeds(Algorithm::fullavg, true);
  const bool steadier = defkt.oscillation <= fullavg.oscillation;
  const bool better = defkt.final_accuracy > fullavg.final_accuracy;
  report(9, "def-kt stability", steadier || better,
         "label skew, K=16, Q=3; last-20% std defkt " + fmt(defkt.oscillation) + " vs fullavg " +
             fmt(fullavg.oscillation) + (steadier ? " (holds)" : " (does not hold)") + "; mean final accuracy " +
             fmt(defkt.final_accuracy) + " vs " + fmt(fullavg.final_accuracy) + (better ? " (holds)" : " (does not hold)"));
}

// ---- 10 ----------------------------------------------------------------------

void determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("fedsim_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  bool files_equal = true, modes_equal = true;
  const Algorithm all[] = {Algorithm::fedavg, Algorithm::fedprox, Algorithm::fednova, Algorithm::fedlbl,
                           Algorithm::feddf,  Algorithm::defkt,   Algorithm::fullavg, Algorithm::combo};
  for (Algorithm a : all) {
    SimConfig cfg = label_skew(desk_config(a, 11));
    cfg.rounds = 10;
    cfg.partition.labels_per_client = 2;
    std::string bytes[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path file = dir / (std::string(to_string(a)) + "_" + std::to_string(run) + ".csv");
      {
        std::ofstream out(file, std::ios::binary);
        const auto log = run_simulation(cfg);
        write_metrics(out, std::span<const MetricsLog>(&log, 1));
      }
      std::ifstream in(file, std::ios::binary);
      bytes[run].assign(std::istreambuf_iterator<char>(in), {});
    }
    files_equal = files_equal && !bytes[0].empty() && bytes[0] == bytes[1];
    SimConfig par = cfg;
    par.parallel = true;
    modes_equal = modes_equal && same_numbers(run_simulation(cfg), run_simulation(par));
  }
  fs::remove_all(dir);
  report(10, "determinism", files_equal && modes_equal,
         std::string("8 algorithms; repeated runs ") + (files_equal ? "byte-identical" : "DIFFER") +
             "; serial vs concurrent " + (modes_equal ? "bitwise equal" : "DIFFER"));
}

}  // namespace

int main() {
  gradient_integrity();
  exact_reductions();
  aggregation_oracles();
  fednova_formula();
  partitioner_invariants();
  dirichlet_concentration();
  qualitative_findings();
  determinism();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
