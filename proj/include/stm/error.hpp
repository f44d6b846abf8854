#pragma once

#include <stdexcept>
#include <string>

namespace stm {

// Every failure surfaced by the library derives from Error so callers (the
// CLI in particular) can map it onto a machine-readable record.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Bad tensor shapes, labels out of range, unreadable files.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error("input_error", what) {}
};

// Invalid hyperparameters, empty pools, inconsistent ensembles.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

// Gradient requested from a handle that cannot provide one.
class UnsupportedError : public Error {
 public:
  explicit UnsupportedError(const std::string& what) : Error("unsupported_capability", what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training_failure", what) {}
};

// A prerequisite artifact is missing; the message names the producing command.
class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::string& what) : Error("missing_artifact", what) {}
};

// Raised when an internal invariant (e.g. the epsilon ball) is broken. This
// always indicates a bug, never bad user input.
class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what) : Error("invariant_violation", what) {}
};

}  // namespace stm
