#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"

namespace despeckle {

/// Single-band intensity raster, row-major.
class Image2D {
 public:
  Image2D() : Image2D(1, 1) {}

  Image2D(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) throw ShapeError("Image2D: rows and cols must be >= 1");
    data_.assign(rows * cols, fill);
  }

  Image2D(std::size_t rows, std::size_t cols, std::vector<double> data) : Image2D(rows, cols) {
    if (data.size() != rows * cols)
      throw ShapeError("Image2D: data length " + std::to_string(data.size()) + " != " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    data_ = std::move(data);
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  bool same_shape(const Image2D& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Image2D crop(std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) const {
    if (r0 + rows > rows_ || c0 + cols > cols_) throw ShapeError("Image2D::crop: window out of bounds");
    Image2D out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>((r0 + r) * cols_ + c0), cols,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(r * cols));
    return out;
  }

  friend bool operator==(const Image2D&, const Image2D&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

inline void require_same_shape(const Image2D& a, const Image2D& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": image dimensions differ (" + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

inline void require_finite(const Image2D& img, const char* where) {
  for (double v : img.data())
    if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite pixel value");
}

struct MeanVariance {
  double mean = 0.0;
  double variance = 0.0;  ///< unbiased
};

inline MeanVariance mean_variance(std::span<const double> values) {
  MeanVariance mv;
  if (values.empty()) return mv;
  // Shifted by the first sample: a constant input gives exactly zero variance.
  const double shift = values[0];
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v - shift;
  const double mean_shifted = sum / n;
  mv.mean = shift + mean_shifted;
  if (values.size() < 2) return mv;
  double sq = 0.0;
  for (double v : values) sq += (v - shift - mean_shifted) * (v - shift - mean_shifted);
  mv.variance = sq / (n - 1.0);
  return mv;
}

/// Image rescaled into [0, 1] by its maximum, with the factor that undoes it.
struct NormalizedImage {
  Image2D image;
  double scale = 1.0;  ///< original = image * scale
};

/// Leaves images already inside [0, 1] untouched (scale 1). Negative pixels
/// are clamped to 0.
inline NormalizedImage normalize_unit(const Image2D& img) {
  require_finite(img, "normalize_unit");
  NormalizedImage out{img, 1.0};
  double peak = 0.0;
  for (double& v : out.image.data()) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  if (peak > 1.0) {
    for (double& v : out.image.data()) v /= peak;
    out.scale = peak;
  }
  return out;
}

}  // namespace despeckle
