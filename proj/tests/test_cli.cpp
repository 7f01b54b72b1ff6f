#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/cli.hpp"
#include "fedsim/config.hpp"
#include "fedsim/error.hpp"
#include "fedsim/metrics.hpp"

namespace fs = std::filesystem;
using namespace fedsim;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("fedsim_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fedsim");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

// Drops the algorithm column so rows of different algorithms can be compared.
std::string without_algorithm(const std::string& row) {
  const auto a = row.find(',');
  const auto b = row.find(',', a + 1);
  return row.substr(0, a) + row.substr(b);
}

const char* kMinimal =
    "# smallest useful experiment\n"
    "clients=4\n"
    "participation=0.5\n"
    "rounds=2\n"
    "algorithm=fedavg\n"
    "dataset.kind=blobs\n"
    "dataset.per_class=30\n"
    "partition.strategy=iid\n";

double population_sd(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("run: minimal config writes one row per round") {
  TempDir dir;
  write(dir.file("c.txt"), kMinimal);
  const auto r = cli({"run", "--config", dir.file("c.txt"), "--out", dir.file("m.csv")});
  CHECK(r.code == 0);
  const auto rows = lines(slurp(dir.file("m.csv")));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == kMetricsHeader);
  CHECK(rows[1].rfind("1,fedavg,iid,", 0) == 0);
  CHECK(rows[2].rfind("2,fedavg,iid,", 0) == 0);
}

TEST_CASE("run: rerunning produces identical bytes") {
  TempDir dir;
  write(dir.file("c.txt"), kMinimal);
  REQUIRE(cli({"run", "--config", dir.file("c.txt"), "--out", dir.file("a.csv")}).code == 0);
  const std::string first = slurp(dir.file("a.csv"));
  REQUIRE(cli({"run", "--config", dir.file("c.txt"), "--out", dir.file("a.csv")}).code == 0);
  CHECK(slurp(dir.file("a.csv")) == first);
}

TEST_CASE("run: fedprox with lambda 0 matches fedavg row for row") {
  TempDir dir;
  write(dir.file("c.txt"), kMinimal);
  REQUIRE(cli({"run", "--config", dir.file("c.txt"), "--set", "rounds=5", "--out", dir.file("avg.csv")}).code == 0);
  REQUIRE(cli({"run", "--config", dir.file("c.txt"), "--set", "rounds=5", "--set", "algorithm=fedprox", "--set",
               "lambda=0.0", "--out", dir.file("prox.csv")})
              .code == 0);
  const auto a = lines(slurp(dir.file("avg.csv"))), b = lines(slurp(dir.file("prox.csv")));
  REQUIRE(a.size() == 6);
  REQUIRE(b.size() == 6);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(without_algorithm(a[i]) == without_algorithm(b[i]));
}

TEST_CASE("config errors exit 2 and name the problem") {
  TempDir dir;
  write(dir.file("c.txt"), kMinimal);
  auto r = cli({"run", "--config", dir.file("c.txt"), "--set", "algoritm=fedavg"});
  CHECK(r.code == 2);
  CHECK(r.err.find("algoritm") != std::string::npos);

  write(dir.file("bad.txt"), std::string(kMinimal) + "algoritm=fedprox\n");
  r = cli({"run", "--config", dir.file("bad.txt")});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.txt:9:") != std::string::npos);
  CHECK(r.err.find("'algoritm'") != std::string::npos);

  write(dir.file("val.txt"), "clients=4\nparticipation=0.1\n");
  CHECK(cli({"run", "--config", dir.file("val.txt")}).code == 2);
  write(dir.file("num.txt"), "clients=four\n");
  r = cli({"run", "--config", dir.file("num.txt")});
  CHECK(r.code == 2);
  CHECK(r.err.find("num.txt:1:") != std::string::npos);
  CHECK(cli({"run", "--config", dir.file("missing.txt")}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"run"}).code == 2);
}

TEST_CASE("runtime failures exit 1") {
  TempDir dir;
  write(dir.file("c.txt"), kMinimal);
  const auto r = cli({"run", "--config", dir.file("c.txt"), "--out", dir.file("no/such/dir/m.csv")});
  CHECK(r.code == 1);
}

TEST_CASE("overrides win over file values") {
  std::istringstream in("rounds=7\nseed=3\n");
  const auto exp = parse_experiment(in, "inline", {"rounds=9"});
  CHECK(exp.sim.rounds == 9);
  CHECK(exp.sim.seed == 3);
  std::istringstream defaults("");
  const auto d = parse_experiment(defaults, "inline");
  CHECK(d.sim.batch_size == 64);
  CHECK(d.sim.weight_decay == 0.004);
  CHECK(d.sim.participation == 0.2);
  CHECK(d.sim.local_epochs == 1);
  CHECK(d.sim.rounds == 50);
  CHECK_THROWS_AS(parse_experiment(defaults, "inline", {"no_equals"}), ConfigError);
}

TEST_CASE("rendered configs parse back to the same settings") {
  ExperimentFile exp;
  apply_setting(exp, "algorithm", "defkt");
  apply_setting(exp, "model.hidden", "8,4");
  apply_setting(exp, "mutual.loss", "cross_entropy");
  apply_setting(exp, "partition.beta", "0.125");
  apply_setting(exp, "output", "x.csv");
  const std::string text = render_experiment(exp);
  std::istringstream in(text);
  const auto back = parse_experiment(in, "rendered");
  CHECK(render_experiment(back) == text);
  CHECK(back.sim.hidden == std::vector<std::size_t>{8, 4});
  CHECK(back.sim.algorithm == Algorithm::defkt);
  CHECK(known_keys().size() == lines(text).size());
}

TEST_CASE("partition command") {
  TempDir dir;
  SUBCASE("iid with one client covers the whole training pool") {
    write(dir.file("c.txt"), "clients=1\ndataset.classes=3\ndataset.per_class=50\n");
    REQUIRE(cli({"partition", "--config", dir.file("c.txt"), "--out", dir.file("p.txt")}).code == 0);
    const auto l = lines(slurp(dir.file("p.txt")));
    REQUIRE(l.size() == 1);
    CHECK(l[0] == "0 120 40,40,40");
    CHECK(lines(slurp(dir.file("p.txt.skew.csv"))).size() == 3);
  }
  SUBCASE("one label per client when K = L") {
    write(dir.file("c.txt"),
          "clients=5\ndataset.classes=5\npartition.strategy=label_quantity\npartition.labels_per_client=1\n");
    REQUIRE(cli({"partition", "--config", dir.file("c.txt"), "--out", dir.file("p.txt")}).code == 0);
    std::ifstream in(dir.file("p.txt"));
    const auto manifest = read_manifest(in);
    REQUIRE(manifest.size() == 5);
    for (const auto& m : manifest) CHECK(std::count_if(m.histogram.begin(), m.histogram.end(), [](auto h) { return h > 0; }) == 1);
  }
  SUBCASE("dirichlet with huge beta stays near global proportions") {
    write(dir.file("c.txt"),
          "clients=10\ndataset.classes=10\ndataset.per_class=1250\npartition.strategy=label_dirichlet\n"
          "partition.beta=10000\n");
    REQUIRE(cli({"partition", "--config", dir.file("c.txt"), "--out", dir.file("p.txt")}).code == 0);
    std::ifstream in(dir.file("p.txt"));
    const auto manifest = read_manifest(in);
    std::vector<double> global(10, 0.0);
    double total = 0.0;
    for (const auto& m : manifest) {
      for (std::size_t c = 0; c < 10; ++c) global[c] += static_cast<double>(m.histogram[c]);
      total += static_cast<double>(m.num_samples);
    }
    CHECK(total == 10000.0);
    for (const auto& m : manifest) {
      for (std::size_t c = 0; c < 10; ++c) {
        const double p = static_cast<double>(m.histogram[c]) / static_cast<double>(m.num_samples);
        CHECK(std::abs(p - global[c] / total) <= 0.05 * global[c] / total);
      }
    }
  }
}

TEST_CASE("compare command") {
  TempDir dir;
  write(dir.file("c.txt"), std::string(kMinimal) + "rounds=3\n");
  SUBCASE("an algorithm against itself gives identical series") {
    REQUIRE(cli({"compare", "--config", dir.file("c.txt"), "--algorithms", "fedavg,fedavg", "--out", dir.file("x.csv")})
                .code == 0);
    const auto l = lines(slurp(dir.file("x.csv")));
    REQUIRE(l.size() == 7);
    for (std::size_t i = 1; i <= 3; ++i) CHECK(l[i] == l[i + 3]);
  }
  SUBCASE("label skew summary and row conservation") {
    REQUIRE(cli({"compare", "--config", dir.file("c.txt"), "--algorithms", "fedavg,fedprox,defkt", "--set",
                 "partition.strategy=label_quantity", "--set", "partition.labels_per_client=1", "--set",
                 "dataset.classes=4", "--set", "peers=1", "--out", dir.file("x.csv")})
                .code == 0);
    CHECK(lines(slurp(dir.file("x.csv"))).size() == 1 + 3 * 3);
    std::ifstream in(dir.file("x.csv"));
    const auto summaries = summarize_by_algorithm(read_metrics(in));
    REQUIRE(summaries.size() == 3);
    for (const auto& s : summaries) {
      CHECK(s.final_accuracy >= 0.0);
      CHECK(s.final_accuracy <= 1.0);
    }
    const auto summary = lines(slurp(dir.file("x.csv.summary.csv")));
    REQUIRE(summary.size() == 4);
    CHECK(summary[1].rfind("fedavg,", 0) == 0);
    CHECK(summary[2].rfind("fedprox,", 0) == 0);
  }
  CHECK(cli({"compare", "--config", dir.file("c.txt"), "--algorithms", "fedavg"}).code == 2);
  CHECK(cli({"compare", "--config", dir.file("c.txt"), "--algorithms", "fedavg,nope"}).code == 2);
}

TEST_CASE("report command") {
  TempDir dir;
  const std::string header = std::string(kMetricsHeader) + "\n";
  SUBCASE("constant accuracy has zero oscillation") {
    std::string text = header;
    for (int r = 1; r <= 10; ++r) text += std::to_string(r) + ",fedavg,iid,0.500000,1.000000,0;1,1\n";
    write(dir.file("m.csv"), text);
    const auto r = cli({"report", dir.file("m.csv")});
    CHECK(r.code == 0);
    CHECK(r.out.find("oscillation=0.000000") != std::string::npos);
    CHECK(r.out.find("best_round=1") != std::string::npos);
  }
  SUBCASE("a single row summarises to itself") {
    write(dir.file("m.csv"), header + "1,fedlbl,iid,0.625000,0.900000,2,7\n");
    const auto r = cli({"report", dir.file("m.csv")});
    CHECK(r.code == 0);
    CHECK(r.out == "algorithm=fedlbl rounds=1 final_accuracy=0.625000 best_accuracy=0.625000 best_round=1 "
                   "oscillation=0.000000\n");
  }
  SUBCASE("malformed files exit 2") {
    write(dir.file("m.csv"), header + "1,fedavg,iid,zero,1,0,1\n");
    CHECK(cli({"report", dir.file("m.csv")}).code == 2);
    write(dir.file("h.csv"), "round,acc\n1,0.5\n");
    CHECK(cli({"report", dir.file("h.csv")}).code == 2);
    write(dir.file("e.csv"), header);
    CHECK(cli({"report", dir.file("e.csv")}).code == 2);
    CHECK(cli({"report", dir.file("absent.csv")}).code == 2);
  }
}

TEST_CASE("summary statistics match a spreadsheet-style recomputation") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(t % 37);
    std::vector<MetricsRow> rows;
    for (std::size_t r = 1; r <= n; ++r) {
      // Round to the six decimals the table stores.
      const double acc = std::round(unit(rng) * 1e6) / 1e6;
      rows.push_back({r, "fedavg", "iid", acc, 1.0, {0}, 1});
    }
    const Summary s = summarize(rows);
    // Oracle: last ceil(20%) rows, population standard deviation.
    const std::size_t window = std::max<std::size_t>(1, (n + 4) / 5);
    std::vector<double> tail;
    for (std::size_t i = n - window; i < n; ++i) tail.push_back(rows[i].test_accuracy);
    CHECK(s.oscillation == doctest::Approx(population_sd(tail)).epsilon(1e-12));
    double best = -1.0;
    std::size_t best_round = 0;
    for (const auto& r : rows) {
      if (r.test_accuracy > best) {
        best = r.test_accuracy;
        best_round = r.round;
      }
    }
    CHECK(s.best_accuracy == best);
    CHECK(s.best_round == best_round);
    CHECK(s.final_accuracy == rows.back().test_accuracy);

    std::ostringstream os;
    MetricsLog log;
    for (const auto& r : rows) log.rounds.push_back({r.round, r.test_accuracy, r.test_loss, 0.0, r.participants, 0.0});
    log.seed = 1;
    write_metrics(os, std::span<const MetricsLog>(&log, 1));
    std::istringstream in(os.str());
    const auto back = read_metrics(in);
    CHECK(summarize(back).oscillation == doctest::Approx(s.oscillation).epsilon(1e-12));
  }
}

TEST_CASE("oscillation skips unevaluated rounds") {
  const double nan = std::nan("");
  const std::vector<double> acc = {0.1, nan, 0.2, nan, 0.4, nan, 0.5, nan, 0.3, 0.7};
  // window = last 2 rounds: {0.3, 0.7}
  CHECK(oscillation(acc) == doctest::Approx(0.2));
  CHECK(oscillation(std::vector<double>{0.5}) == 0.0);
}
