#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cleardr {

// Root of every error the library raises. Callers that only care about
// "something went wrong" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its mathematical domain (label out of range, zero std...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid sequencer or training configuration.
class ConfigError : public Error {
 public:
  ConfigError(std::size_t layer, const std::string& what)
      : Error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  explicit ConfigError(const std::string& what) : Error(what), layer_(npos) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

// Trace was produced by a different model than the one it is used with.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Loss became non-finite during training.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// File or stream level failure: missing files, unreadable images, bad CSV.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / sidecar decoding failure. The kind distinguishes the cases.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kShapeInconsistency, kChecksumMismatch, kBadDescriptor };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace cleardr
