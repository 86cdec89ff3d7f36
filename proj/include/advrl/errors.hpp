#pragma once

#include <stdexcept>
#include <string>

namespace advrl {

// Base for every error raised by the library. `category()` is the short,
// machine-parsable tag the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

// Violated precondition (bad argument, wrong call order).
class ContractError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "contract"; }
};

// Tensor shapes do not line up.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
  const char* category() const noexcept override { return "dimension"; }
};

// Attack loss evaluated where the target probability is ~0.
class DegenerateLossError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "degenerate-loss"; }
};

// Attack gradient too small to normalize or act on.
class DegenerateGradientError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "degenerate-gradient"; }
};

class CheckpointError : public Error {
 public:
  enum class Kind { version_mismatch, shape_inconsistency, malformed };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }
  const char* category() const noexcept override { return "checkpoint"; }

 private:
  Kind kind_;
};

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "training-diverged"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

// A CSV or other input file does not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "schema"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

}  // namespace advrl
