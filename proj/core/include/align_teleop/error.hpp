#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace align_teleop {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input rejected: wrong dimensions, out-of-range values, empty batches.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidInput {
 public:
  DimensionMismatch(const std::string& what, std::size_t expected, std::size_t got)
      : InvalidInput(what + ": expected dimension " + std::to_string(expected) + ", got " +
                     std::to_string(got)) {}
};

/// Non-finite loss or gradient during optimization. `index` is the offending
/// parameter index (adam) or epoch (trainers).
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::size_t index)
      : Error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class DegenerateQuery : public Error {
 public:
  using Error::Error;
};

class DegenerateFit : public Error {
 public:
  using Error::Error;
};

class InfeasibleTask : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or data file with an unknown format tag or version.
class IncompatibleFile : public Error {
 public:
  using Error::Error;
};

}  // namespace align_teleop
