#include "fedsim/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <sstream>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_unsigned(std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("expected a nonnegative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("expected a finite number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = v.find(',', pos);
    out.push_back(parse_unsigned<std::size_t>(trim(v.substr(pos, comma - pos))));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

LossKind parse_loss(std::string_view v) {
  if (v == "cross_entropy") return LossKind::cross_entropy;
  if (v == "mse") return LossKind::mse_onehot;
  throw ConfigError("expected cross_entropy or mse, got '" + std::string(v) + "'");
}

Weighting parse_weighting(std::string_view v) {
  if (v == "uniform") return Weighting::uniform;
  if (v == "by_samples") return Weighting::by_samples;
  throw ConfigError("expected uniform or by_samples, got '" + std::string(v) + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(std::size_t v) { return std::to_string(v); }

struct Field {
  std::function<void(ExperimentFile&, std::string_view)> set;
  std::function<std::string(const ExperimentFile&)> get;
};

template <class T>
Field size_field(T SimConfig::*member) {
  return {[member](ExperimentFile& e, std::string_view v) { e.sim.*member = parse_unsigned<T>(v); },
          [member](const ExperimentFile& e) { return std::to_string(e.sim.*member); }};
}

Field real_field(double SimConfig::*member) {
  return {[member](ExperimentFile& e, std::string_view v) { e.sim.*member = parse_double(v); },
          [member](const ExperimentFile& e) { return fmt(e.sim.*member); }};
}

#define FEDSIM_REAL(path)                                                         \
  Field {                                                                         \
    [](ExperimentFile& e, std::string_view v) { e.sim.path = parse_double(v); }, \
        [](const ExperimentFile& e) { return fmt(e.sim.path); }                   \
  }
#define FEDSIM_SIZE(path)                                                                       \
  Field {                                                                                       \
    [](ExperimentFile& e, std::string_view v) { e.sim.path = parse_unsigned<std::size_t>(v); }, \
        [](const ExperimentFile& e) { return fmt(e.sim.path); }                                 \
  }

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      {"seed", size_field(&SimConfig::seed)},
      {"algorithm",
       {[](ExperimentFile& e, std::string_view v) { e.sim.algorithm = parse_algorithm(v); },
        [](const ExperimentFile& e) { return std::string(to_string(e.sim.algorithm)); }}},
      {"clients", size_field(&SimConfig::clients)},
      {"participation", real_field(&SimConfig::participation)},
      {"local_epochs", size_field(&SimConfig::local_epochs)},
      {"batch_size", size_field(&SimConfig::batch_size)},
      {"rounds", size_field(&SimConfig::rounds)},
      {"local_eta", real_field(&SimConfig::local_eta)},
      {"weight_decay", real_field(&SimConfig::weight_decay)},
      {"eval_every", size_field(&SimConfig::eval_every)},
      {"validation_fraction", real_field(&SimConfig::validation_fraction)},
      {"parallel",
       {[](ExperimentFile& e, std::string_view v) { e.sim.parallel = parse_bool(v); },
        [](const ExperimentFile& e) { return std::string(e.sim.parallel ? "true" : "false"); }}},
      {"output",
       {[](ExperimentFile& e, std::string_view v) { e.output = std::string(v); },
        [](const ExperimentFile& e) { return e.output; }}},
      {"lambda", real_field(&SimConfig::prox_lambda)},
      {"aggregate.weighting",
       {[](ExperimentFile& e, std::string_view v) { e.sim.weighting = parse_weighting(v); },
        [](const ExperimentFile& e) {
          return std::string(e.sim.weighting == Weighting::uniform ? "uniform" : "by_samples");
        }}},
      {"fednova.alpha", FEDSIM_REAL(fednova.alpha_scale)},
      {"fednova.beta", FEDSIM_REAL(fednova.beta_floor)},
      {"fednova.d_ref", FEDSIM_REAL(fednova.d_ref)},
      {"fedlbl.alpha", FEDSIM_REAL(fedlbl.alpha)},
      {"fedlbl.nu", FEDSIM_REAL(fedlbl.nu)},
      {"fedlbl.threshold", FEDSIM_SIZE(fedlbl.label_threshold)},
      {"feddf.steps", FEDSIM_SIZE(distill.steps)},
      {"feddf.eta", FEDSIM_REAL(distill.eta)},
      {"feddf.samples", FEDSIM_SIZE(distill.samples)},
      {"feddf.batch_size", FEDSIM_SIZE(distill.batch_size)},
      {"peers", size_field(&SimConfig::peers)},
      {"mutual.eta1", FEDSIM_REAL(mutual.eta1)},
      {"mutual.eta2", FEDSIM_REAL(mutual.eta2)},
      {"mutual.kl_weight", FEDSIM_REAL(mutual.kl_weight)},
      {"mutual.loss",
       {[](ExperimentFile& e, std::string_view v) { e.sim.mutual.data_loss = parse_loss(v); },
        [](const ExperimentFile& e) {
          return std::string(e.sim.mutual.data_loss == LossKind::cross_entropy ? "cross_entropy" : "mse");
        }}},
      {"model.hidden",
       {[](ExperimentFile& e, std::string_view v) { e.sim.hidden = parse_list(v); },
        [](const ExperimentFile& e) {
          std::string out;
          for (std::size_t i = 0; i < e.sim.hidden.size(); ++i) out += (i ? "," : "") + fmt(e.sim.hidden[i]);
          return out;
        }}},
      {"dataset.kind",
       {[](ExperimentFile& e, std::string_view v) { e.sim.dataset.kind = parse_dataset_kind(v); },
        [](const ExperimentFile& e) { return std::string(to_string(e.sim.dataset.kind)); }}},
      {"dataset.classes", FEDSIM_SIZE(dataset.classes)},
      {"dataset.per_class", FEDSIM_SIZE(dataset.per_class)},
      {"dataset.dim", FEDSIM_SIZE(dataset.dim)},
      {"dataset.spread", FEDSIM_REAL(dataset.spread)},
      {"dataset.center_scale", FEDSIM_REAL(dataset.center_scale)},
      {"dataset.per_octant", FEDSIM_SIZE(dataset.per_octant)},
      {"dataset.cube_scale", FEDSIM_REAL(dataset.cube_scale)},
      {"dataset.sources", FEDSIM_SIZE(dataset.sources)},
      {"dataset.source_shift", FEDSIM_REAL(dataset.source_shift)},
      {"dataset.test_fraction", FEDSIM_REAL(dataset.test_fraction)},
      {"partition.strategy",
       {[](ExperimentFile& e, std::string_view v) { e.sim.partition.strategy = parse_partition_strategy(v); },
        [](const ExperimentFile& e) { return std::string(to_string(e.sim.partition.strategy)); }}},
      {"partition.labels_per_client", FEDSIM_SIZE(partition.labels_per_client)},
      {"partition.beta", FEDSIM_REAL(partition.beta)},
      {"partition.sigma_max", FEDSIM_REAL(partition.sigma_max)},
  };
  return table;
}

#undef FEDSIM_REAL
#undef FEDSIM_SIZE

std::pair<std::string_view, std::string_view> split_assignment(std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value");
  const auto key = trim(line.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key");
  return {key, trim(line.substr(eq + 1))};
}

}  // namespace

void apply_setting(ExperimentFile& exp, std::string_view key, std::string_view value) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + std::string(key) + "'");
  try {
    it->second.set(exp, value);
  } catch (const ConfigError& e) {
    throw ConfigError("key '" + std::string(key) + "': " + e.what());
  }
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : fields()) keys.push_back(k);
  return keys;
}

ExperimentFile parse_experiment(std::istream& in, const std::string& source,
                                const std::vector<std::string>& overrides) {
  ExperimentFile exp;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    try {
      const auto [key, value] = split_assignment(body);
      apply_setting(exp, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  for (const auto& text : overrides) {
    try {
      const auto [key, value] = split_assignment(text);
      apply_setting(exp, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("--set " + text + ": " + e.what());
    }
  }
  return exp;
}

ExperimentFile load_experiment(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  return parse_experiment(in, path, overrides);
}

std::string render_experiment(const ExperimentFile& exp) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + "=" + field.get(exp) + "\n";
  return out;
}

}  // namespace fedsim
