#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace despeckle {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (even kernel size, looks < 1, bad architecture).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Batch normalization asked to estimate statistics from fewer than two values.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// No usable source image for patch extraction.
class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Filesystem failure (cannot open, cannot write, cannot rename).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace despeckle
