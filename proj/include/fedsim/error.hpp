#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

/// Invalid inputs: bad dimensions, out-of-range parameters, unknown config keys.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Violated round lifecycle: empty update lists, plan/client mismatches, missing data.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedsim
