#pragma once

// Experiment files: one `key=value` per line, `#` starts a comment, blank
// lines are ignored. Keys use section prefixes (partition.strategy=...).
// Missing keys keep the SimConfig defaults; unknown keys are rejected.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/simulator.hpp"

namespace fedsim {

struct ExperimentFile {
  SimConfig sim;
  std::string output;  // empty: the command picks its own default
};

/// Applies one setting. Throws ConfigError naming the key on failure.
void apply_setting(ExperimentFile& exp, std::string_view key, std::string_view value);

/// All recognised keys, sorted.
std::vector<std::string> known_keys();

/// Parses a document, then applies `overrides` ("key=value") on top.
/// Errors read "<source>:<line>: ..." or "--set <text>: ...".
ExperimentFile parse_experiment(std::istream& in, const std::string& source,
                                const std::vector<std::string>& overrides = {});

ExperimentFile load_experiment(const std::string& path, const std::vector<std::string>& overrides = {});

/// Renders every key with its current value; parse_experiment reads it back.
std::string render_experiment(const ExperimentFile& exp);

}  // namespace fedsim
