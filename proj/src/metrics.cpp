#include "fedsim/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

std::string fixed6(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(s);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

template <class T>
T parse_uint(const std::string& text, std::size_t line, const char* what) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError("line " + std::to_string(line) + ": bad " + what + " '" + text + "'");
  }
  return value;
}

double parse_real(const std::string& text, std::size_t line, const char* what) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError("line " + std::to_string(line) + ": bad " + what + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<MetricsRow> to_rows(const MetricsLog& log) {
  std::vector<MetricsRow> rows;
  rows.reserve(log.rounds.size());
  for (const auto& r : log.rounds) {
    rows.push_back({r.round, std::string(to_string(log.algorithm)), std::string(to_string(log.partition)),
                    r.test_accuracy, r.test_loss, r.participants, log.seed});
  }
  return rows;
}

void write_metrics(std::ostream& out, std::span<const MetricsLog> logs) {
  out << kMetricsHeader << '\n';
  for (const auto& log : logs) {
    for (const auto& row : to_rows(log)) {
      out << row.round << ',' << row.algorithm << ',' << row.partition << ',' << fixed6(row.test_accuracy) << ','
          << fixed6(row.test_loss) << ',';
      for (std::size_t i = 0; i < row.participants.size(); ++i) out << (i ? ";" : "") << row.participants[i];
      out << ',' << row.seed << '\n';
    }
  }
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("line 1: empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw ConfigError("line 1: expected header '" + std::string(kMetricsHeader) + "'");
  std::vector<MetricsRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 7) {
      throw ConfigError("line " + std::to_string(number) + ": expected 7 fields, got " +
                        std::to_string(fields.size()));
    }
    MetricsRow row;
    row.round = parse_uint<std::size_t>(fields[0], number, "round");
    row.algorithm = fields[1];
    row.partition = fields[2];
    row.test_accuracy = parse_real(fields[3], number, "test_accuracy");
    row.test_loss = parse_real(fields[4], number, "test_loss");
    if (!fields[5].empty()) {
      for (const auto& id : split(fields[5], ';')) row.participants.push_back(parse_uint<std::size_t>(id, number, "participant"));
    }
    row.seed = parse_uint<std::uint64_t>(fields[6], number, "seed");
    if (row.algorithm.empty()) throw ConfigError("line " + std::to_string(number) + ": empty algorithm");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("metrics file has no data rows");
  return rows;
}

double oscillation(std::span<const double> accuracies) {
  if (accuracies.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto n = accuracies.size();
  const auto window = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n) - 1e-9)));
  std::vector<double> tail;
  for (std::size_t i = n - window; i < n; ++i) {
    if (!std::isnan(accuracies[i])) tail.push_back(accuracies[i]);
  }
  if (tail.empty()) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double a : tail) mean += a;
  mean /= static_cast<double>(tail.size());
  double var = 0.0;
  for (double a : tail) var += (a - mean) * (a - mean);
  return std::sqrt(var / static_cast<double>(tail.size()));
}

Summary summarize(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw ConfigError("summarize: no rows");
  Summary s;
  s.algorithm = rows.front().algorithm;
  s.rounds = rows.size();
  s.final_accuracy = std::numeric_limits<double>::quiet_NaN();
  s.best_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> acc;
  acc.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.algorithm != s.algorithm) throw ConfigError("summarize: mixed algorithms in one series");
    acc.push_back(r.test_accuracy);
    if (std::isnan(r.test_accuracy)) continue;
    s.final_accuracy = r.test_accuracy;
    if (std::isnan(s.best_accuracy) || r.test_accuracy > s.best_accuracy) {
      s.best_accuracy = r.test_accuracy;
      s.best_round = r.round;
    }
  }
  s.oscillation = oscillation(acc);
  return s;
}

std::vector<Summary> summarize_by_algorithm(std::span<const MetricsRow> rows) {
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.algorithm) == order.end()) order.push_back(r.algorithm);
  }
  std::vector<Summary> out;
  for (const auto& name : order) {
    std::vector<MetricsRow> series;
    std::copy_if(rows.begin(), rows.end(), std::back_inserter(series),
                 [&](const MetricsRow& r) { return r.algorithm == name; });
    std::stable_sort(series.begin(), series.end(),
                     [](const MetricsRow& a, const MetricsRow& b) { return a.round < b.round; });
    out.push_back(summarize(series));
  }
  return out;
}

void write_summary_table(std::ostream& out, std::span<const Summary> summaries) {
  out << "algorithm,rounds,final_accuracy,best_accuracy,best_round,oscillation\n";
  for (const auto& s : summaries) {
    out << s.algorithm << ',' << s.rounds << ',' << fixed6(s.final_accuracy) << ',' << fixed6(s.best_accuracy) << ','
        << s.best_round << ',' << fixed6(s.oscillation) << '\n';
  }
}

}  // namespace fedsim
