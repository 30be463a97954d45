#pragma once

#include <stdexcept>
#include <string>

namespace cfpanel {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed CSV input (ragged rows, bad numbers, bad header).
class CsvParseError : public Error {
 public:
  using Error::Error;
};

/// The same (unit, time) cell appears more than once in the input.
class DuplicateCell : public Error {
 public:
  using Error::Error;
};

/// A unit has no observed value at all, so imputation cannot fill it.
class AllMissingUnit : public Error {
 public:
  using Error::Error;
};

/// Log transform hit a value <= 0.
class NonPositiveValue : public Error {
 public:
  using Error::Error;
};

/// A panel operation would leave fewer than two units, or the panel is
/// otherwise too small to work with.
class DegeneratePanel : public Error {
 public:
  using Error::Error;
};

/// Precondition violation on an argument (shape mismatch, bad range, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Logistic fit diverged, which indicates (quasi-)separated classes.
class SeparationDetected : public Error {
 public:
  using Error::Error;
};

/// Logistic fit received labels from a single class.
class DegenerateLabels : public Error {
 public:
  using Error::Error;
};

/// An iterative solver produced a non-finite gradient or iterate.
class NumericalDivergence : public Error {
 public:
  using Error::Error;
};

/// Network training produced a non-finite loss.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int epoch)
      : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace cfpanel
