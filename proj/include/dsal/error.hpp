#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dsal {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, arguments, or preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shapes of two operands do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Linear solve failed to reach the requested residual.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, std::size_t iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}

  double residual() const noexcept { return residual_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  std::size_t iterations_;
};

/// Solver failure while generating a particular dataset entry.
class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, std::size_t index)
      : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Persisted container could not be decoded.
class FormatError : public Error {
 public:
  enum class Kind { malformed, version, truncated };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace dsal
