#pragma once

#include <stdexcept>
#include <string>

namespace lldn {

// Thrown for invalid run configuration (bad flags, config files, model/grid
// incompatibility). CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for malformed or missing on-disk data (frames, manifests,
// checkpoints). CLI maps this to exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation produces non-finite values where finite ones are
// required (e.g. training loss). CLI maps this to exit code 4.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or argument violations in tensor ops. Programming/contract errors.
struct OpError : std::runtime_error {
  explicit OpError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lldn
