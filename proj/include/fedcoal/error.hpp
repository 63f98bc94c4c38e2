#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedcoal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on the arguments was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
 public:
  DimensionMismatch(std::size_t lhs, std::size_t rhs, const std::string& where)
      : InvalidArgument(where + ": dimension mismatch (" + std::to_string(lhs) +
                        " vs " + std::to_string(rhs) + ")"),
        lhs_(lhs),
        rhs_(rhs) {}

  std::size_t lhs() const noexcept { return lhs_; }
  std::size_t rhs() const noexcept { return rhs_; }

 private:
  std::size_t lhs_;
  std::size_t rhs_;
};

/// Malformed or truncated input file. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Local training produced a non-finite loss or gradient.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t client_id, std::size_t epoch, std::size_t batch)
      : Error("non-finite loss or gradient (client " + std::to_string(client_id) + ", epoch " +
              std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
        client_id_(client_id),
        epoch_(epoch),
        batch_(batch) {}

  std::size_t client_id() const noexcept { return client_id_; }
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t client_id_;
  std::size_t epoch_;
  std::size_t batch_;
};

}  // namespace fedcoal
