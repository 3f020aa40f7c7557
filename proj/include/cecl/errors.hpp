#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cecl {

// Base for every error raised by the library. Subclasses name the failure
// category so callers (and the CLI) can report it without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameter, noise specification or config file content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input with the wrong shape or an unreadable file.
class InputError : public Error {
 public:
  using Error::Error;
};

// Mathematical precondition violated (zero vector, too few classes, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Prototype bank could not be built (empty class, degenerate mean).
class InitializationError : public Error {
 public:
  using Error::Error;
};

class DegeneratePrototypeError : public InitializationError {
 public:
  using InitializationError::InitializationError;
};

// Broken internal contract, e.g. parameter collections of different shape.
class InternalError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Report generation found missing run artifacts.
class MissingArtifactsError : public Error {
 public:
  explicit MissingArtifactsError(std::vector<std::string> missing);
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  std::vector<std::string> missing_;
};

}  // namespace cecl
