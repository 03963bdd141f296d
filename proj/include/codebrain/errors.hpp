#pragma once

#include <stdexcept>
#include <string>

namespace codebrain {

/// Malformed or version-mismatched file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unreadable, unwritable or truncated file.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A NaN or infinity escaped an operation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Backward pass misuse: detached loss, reused tape.
struct GradientError : std::logic_error {
  using std::logic_error::logic_error;
};

/// An object was used in a state that does not support the call.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// A required input artifact (checkpoint, dataset) does not exist.
struct MissingPrerequisite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unknown configuration key.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace codebrain
