#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"

namespace despeckle {

struct Dims {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t count() const noexcept { return batch * channels * rows * cols; }
  std::size_t plane() const noexcept { return rows * cols; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.batch) + "," + std::to_string(d.channels) + "," +
         std::to_string(d.rows) + "," + std::to_string(d.cols) + ")";
}

/// Rank-4 array in (batch, channel, row, col) row-major order.
class Tensor4 {
 public:
  Tensor4() : Tensor4(Dims{}) {}

  explicit Tensor4(Dims dims, double fill = 0.0) : dims_(dims) {
    if (dims.batch == 0 || dims.channels == 0 || dims.rows == 0 || dims.cols == 0)
      throw ShapeError("Tensor4: every dimension must be >= 1, got " + to_string(dims));
    data_.assign(dims.count(), fill);
  }

  Tensor4(Dims dims, std::vector<double> data) : Tensor4(dims) {
    if (data.size() != dims.count())
      throw ShapeError("Tensor4: data length " + std::to_string(data.size()) +
                       " does not match dims " + to_string(dims));
    data_ = std::move(data);
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::size_t b, std::size_t c, std::size_t r, std::size_t col) const noexcept {
    return ((b * dims_.channels + c) * dims_.rows + r) * dims_.cols + col;
  }
  double& at(std::size_t b, std::size_t c, std::size_t r, std::size_t col) noexcept {
    return data_[offset(b, c, r, col)];
  }
  double at(std::size_t b, std::size_t c, std::size_t r, std::size_t col) const noexcept {
    return data_[offset(b, c, r, col)];
  }

  /// Contiguous rows*cols plane of one (batch, channel) pair.
  std::span<double> plane(std::size_t b, std::size_t c) noexcept {
    return std::span<double>(data_).subspan(offset(b, c, 0, 0), dims_.plane());
  }
  std::span<const double> plane(std::size_t b, std::size_t c) const noexcept {
    return std::span<const double>(data_).subspan(offset(b, c, 0, 0), dims_.plane());
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

}  // namespace despeckle
