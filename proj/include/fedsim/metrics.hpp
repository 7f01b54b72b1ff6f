#pragma once

// Metrics table I/O and the run summary printed by `fedsim report`.
// Schema: round,algorithm,partition,test_accuracy,test_loss,participants,seed
// Reals use fixed six-decimal notation; participants are ';'-joined; rounds
// skipped by eval_every hold "nan". Wall time is not written so that
// reruns produce identical bytes.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedsim/simulator.hpp"

namespace fedsim {

inline constexpr const char* kMetricsHeader = "round,algorithm,partition,test_accuracy,test_loss,participants,seed";

struct MetricsRow {
  std::size_t round = 0;
  std::string algorithm;
  std::string partition;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  std::vector<std::size_t> participants;
  std::uint64_t seed = 0;
};

std::vector<MetricsRow> to_rows(const MetricsLog& log);

/// Header plus the rows of every log, in order.
void write_metrics(std::ostream& out, std::span<const MetricsLog> logs);

/// Throws ConfigError ("line N: ...") on a malformed table.
std::vector<MetricsRow> read_metrics(std::istream& in);

struct Summary {
  std::string algorithm;
  std::size_t rounds = 0;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::size_t best_round = 0;  // earliest round reaching best_accuracy
  double oscillation = 0.0;
};

/// Population standard deviation of the last ceil(0.2 * n) entries
/// (at least one). NaN entries inside the window are skipped.
double oscillation(std::span<const double> accuracies);

/// Summary of one algorithm's series. Rows must share the algorithm and be
/// in round order. NaN accuracies are ignored for final and best.
Summary summarize(std::span<const MetricsRow> rows);

/// One summary per algorithm, in order of first appearance.
std::vector<Summary> summarize_by_algorithm(std::span<const MetricsRow> rows);

void write_summary_table(std::ostream& out, std::span<const Summary> summaries);

}  // namespace fedsim
