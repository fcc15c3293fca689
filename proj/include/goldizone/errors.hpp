#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gz {

// Base of every error raised by the library. Callers that only need to
// report a message can catch this; the subclasses exist so tests and the
// CLI can tell the failure categories apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(const std::string& what, double residual,
                     std::vector<double> best_iterate = {}, double best_value = 0.0)
      : Error(what),
        residual_(residual),
        best_iterate_(std::move(best_iterate)),
        best_value_(best_value) {}

  /// Off-diagonal mass (eigh) or eigen-residual (power iteration) at exit.
  double residual() const noexcept { return residual_; }
  const std::vector<double>& best_iterate() const noexcept { return best_iterate_; }
  double best_value() const noexcept { return best_value_; }

 private:
  double residual_;
  std::vector<double> best_iterate_;
  double best_value_;
};

class DegenerateDistribution : public Error {
 public:
  using Error::Error;
};

class DegenerateGradient : public Error {
 public:
  using Error::Error;
};

class UnsupportedArchitecture : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gz
