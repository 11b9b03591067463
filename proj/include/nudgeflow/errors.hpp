#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nudgeflow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// One or more invariant violations, kept individually for reporting.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "validation failed";
    for (const auto& s : v) out += "\n  " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

/// Point lookup outside the meshed domain.
class LocationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite function samples and similar evaluation failures.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Linear solver failure. `pivot` is the offending column when the
/// factorization broke down, -1 otherwise.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, long pivot = -1, std::vector<double> history = {})
      : Error(what), pivot_(pivot), history_(std::move(history)) {}
  long pivot() const { return pivot_; }
  const std::vector<double>& residual_history() const { return history_; }

 private:
  long pivot_;
  std::vector<double> history_;
};

/// Failure during time integration, tagged with the step that produced it.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t step, double time)
      : Error(what + " (step " + std::to_string(step) + ", t=" + std::to_string(time) + ")"),
        step_(step),
        time_(time) {}
  std::size_t step() const { return step_; }
  double time() const { return time_; }

 private:
  std::size_t step_;
  double time_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace nudgeflow
