#include "fedsim/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/error.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/simulator.hpp"
#include "tasks.hpp"

namespace fedsim {

namespace {

struct Args {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string algorithms;
  std::string metrics;
};

ExperimentFile load(const Args& a) { return load_experiment(a.config, a.sets); }

std::string output_path(const Args& a, const ExperimentFile& exp, const char* fallback) {
  if (!a.out.empty()) return a.out;
  if (!exp.output.empty()) return exp.output;
  return fallback;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f << contents;
  if (!f.flush()) throw std::runtime_error(path + ": write failed");
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string name;
  while (std::getline(is, name, ',')) {
    if (!name.empty()) out.push_back(name);
  }
  return out;
}

int cmd_run(const Args& a, std::ostream& out) {
  const ExperimentFile exp = load(a);
  const std::string path = output_path(a, exp, "metrics.csv");
  const MetricsLog log = run_simulation(exp.sim);
  std::ostringstream table;
  write_metrics(table, std::span<const MetricsLog>(&log, 1));
  write_file(path, table.str());
  const auto rows = to_rows(log);
  const Summary s = summarize(rows);
  out << "wrote " << rows.size() << " rounds to " << path << " (final accuracy " << s.final_accuracy << ")\n";
  return 0;
}

int cmd_partition(const Args& a, std::ostream& out) {
  const ExperimentFile exp = load(a);
  exp.sim.validate_data();
  const std::string path = output_path(a, exp, "partition.txt");
  Dataset train = split_train_test(build_dataset(exp.sim), exp.sim.dataset.test_fraction, exp.sim.seed).first;
  const PartitionMap map = build_partition(exp.sim, train);
  const SkewReport report = skew_report(train, map);
  std::ostringstream manifest, skew;
  write_manifest(manifest, report);
  write_skew_table(skew, report);
  write_file(path, manifest.str());
  write_file(path + ".skew.csv", skew.str());
  out << "wrote " << map.num_clients() << " clients to " << path << " and " << path << ".skew.csv\n";
  return 0;
}

int cmd_compare(const Args& a, std::ostream& out) {
  const ExperimentFile exp = load(a);
  const auto names = split_names(a.algorithms);
  if (names.size() < 2) throw ConfigError("compare needs at least two algorithms (--algorithms a,b)");
  std::vector<SimConfig> configs;
  for (const auto& name : names) {
    SimConfig cfg = exp.sim;
    cfg.algorithm = parse_algorithm(name);
    cfg.validate();
    configs.push_back(cfg);
  }
  const std::string path = output_path(a, exp, "compare.csv");
  std::vector<MetricsLog> logs(configs.size());
  detail::run_tasks(configs.size(), exp.sim.parallel, [&](std::size_t i) { logs[i] = run_simulation(configs[i]); });
  std::ostringstream table, summary;
  write_metrics(table, logs);
  std::vector<Summary> summaries;
  for (const auto& log : logs) summaries.push_back(summarize(to_rows(log)));
  write_summary_table(summary, summaries);
  write_file(path, table.str());
  write_file(path + ".summary.csv", summary.str());
  out << summary.str();
  return 0;
}

int cmd_report(const Args& a, std::ostream& out) {
  std::ifstream in(a.metrics);
  if (!in) throw ConfigError(a.metrics + ": cannot open metrics file");
  std::vector<MetricsRow> rows;
  try {
    rows = read_metrics(in);
  } catch (const ConfigError& e) {
    throw ConfigError(a.metrics + ": " + e.what());
  }
  for (const auto& s : summarize_by_algorithm(rows)) {
    out << "algorithm=" << s.algorithm << " rounds=" << s.rounds << std::fixed << std::setprecision(6)
        << " final_accuracy=" << s.final_accuracy << " best_accuracy=" << s.best_accuracy
        << " best_round=" << s.best_round << " oscillation=" << s.oscillation << '\n';
    out.unsetf(std::ios::floatfield);
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated learning simulator"};
  app.require_subcommand(1);
  Args a;

  auto add_common = [&a](CLI::App* cmd) {
    cmd->add_option("--config", a.config, "key=value experiment file")->required();
    cmd->add_option("--set", a.sets, "override key=value (repeatable, wins over the file)");
    cmd->add_option("--out", a.out, "output path");
  };
  auto* run = app.add_subcommand("run", "run one simulation and write its metrics table");
  add_common(run);
  auto* partition = app.add_subcommand("partition", "write the partition manifest and skew table");
  add_common(partition);
  auto* compare = app.add_subcommand("compare", "run several algorithms on the same data and seed");
  add_common(compare);
  compare->add_option("--algorithms", a.algorithms, "comma-separated algorithm names")->required();
  auto* report = app.add_subcommand("report", "summarise a metrics table");
  report->add_option("metrics", a.metrics, "metrics file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(a, out);
    if (*partition) return cmd_partition(a, out);
    if (*compare) return cmd_compare(a, out);
    return cmd_report(a, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fedsim
