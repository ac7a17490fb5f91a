#pragma once

#include <stdexcept>
#include <string>

namespace kdsm {

/// Bad configuration: invalid hyperparameters, shape mismatches, infeasible
/// settings. Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor dimension mismatch between operands.
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

/// Invalid user-supplied value (empty identifier, malformed prompt string).
struct ValidationError : ConfigError {
    using ConfigError::ConfigError;
};

/// More items than a fixed-capacity container admits (e.g. prompts > K).
struct CapacityError : ConfigError {
    using ConfigError::ConfigError;
};

/// Unreadable or inconsistent external data. Maps to CLI exit code 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, truncation, duplicate keys).
struct ParseError : DataError {
    using DataError::DataError;
};

/// A key (species, category, sample id) that the data does not contain.
struct LookupError : DataError {
    using DataError::DataError;
};

/// Payload bytes do not match the stored checksum.
struct ChecksumError : DataError {
    using DataError::DataError;
};

/// Numeric failure: non-finite loss, checksum mismatch on load.
/// Maps to CLI exit code 4.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace kdsm
