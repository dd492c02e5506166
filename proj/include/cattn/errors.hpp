#pragma once

#include <stdexcept>
#include <string>

namespace cattn {

// Bad flags, config files, generator specs, out-of-range hyperparameters.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed corpus files, records that violate schema invariants, bad
// checkpoints.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures at runtime: non-finite gradients, log of a non-positive
// value, empty evaluable sets.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatches and broken call contracts (non-scalar loss, mismatched
// slicing depth). These indicate a caller bug, not bad data.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace cattn
