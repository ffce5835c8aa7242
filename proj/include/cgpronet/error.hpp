#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cgp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or shape violation in caller-supplied arguments.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A dense code path was requested above the configured node cap.
class ResourceLimit : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Row and column are 1-based; 0 means "not applicable".
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
        row_(row),
        column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

/// Training produced a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, int last_finite_epoch, double last_finite_loss)
      : Error(what),
        epoch_(epoch),
        last_finite_epoch_(last_finite_epoch),
        last_finite_loss_(last_finite_loss) {}

  int epoch() const noexcept { return epoch_; }
  /// -1 when no epoch produced a finite loss.
  int last_finite_epoch() const noexcept { return last_finite_epoch_; }
  double last_finite_loss() const noexcept { return last_finite_loss_; }

 private:
  int epoch_;
  int last_finite_epoch_;
  double last_finite_loss_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace cgp
