#pragma once

// Despeckling quality metrics.
//
// M-hat, the composite index reported here, is an approximation of the
// M-index family of no-reference despeckling scores:
//
//   ratio   = noisy / (max(filtered, 0) + div_eps)
//   dev_k   = min(|ENL_k(ratio) - L| / L, 2)      per homogeneous mask k
//             (infinite ENL, i.e. a constant ratio, scores the cap 2)
//   h       = GLCM homogeneity of the whole ratio image
//   h_ref   = same statistic on a freshly simulated pure-speckle field
//   M-hat   = 50 * mean_k(dev_k) + 50 * |h - h_ref| / h_ref
//
// GLCM homogeneity: values clipped to mean +/- 3 std (population), binned
// uniformly into `levels` grey levels, symmetric co-occurrence matrix per
// offset normalized to unit mass, sum P(i,j) / (1 + |i - j|), averaged over
// offsets. An ideal filter scores 0 in expectation; lower is better.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"
#include "despeckle/rng.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle {

inline constexpr double kInfiniteEnl = std::numeric_limits<double>::infinity();
inline constexpr std::size_t kMinMaskPixels = 100;
inline constexpr std::size_t kDefaultGlcmLevels = 64;
inline constexpr double kEnlDeviationCap = 2.0;

struct Offset {
  int dr = 0;
  int dc = 1;
  friend bool operator==(const Offset&, const Offset&) = default;
};

inline std::vector<Offset> default_offsets() { return {{0, 1}, {1, 0}, {1, 1}, {1, -1}}; }

class RegionMask {
 public:
  RegionMask(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool test(std::size_t i) const noexcept { return bits_[i] != 0; }
  bool test(std::size_t r, std::size_t c) const noexcept { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t i, bool v = true) noexcept { bits_[i] = v ? 1 : 0; }
  void set(std::size_t r, std::size_t c, bool v = true) noexcept { set(r * cols_ + c, v); }
  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  static RegionMask rectangle(std::size_t rows, std::size_t cols, std::size_t r0, std::size_t c0,
                              std::size_t h, std::size_t w) {
    RegionMask m(rows, cols);
    for (std::size_t r = r0; r < std::min(rows, r0 + h); ++r)
      for (std::size_t c = c0; c < std::min(cols, c0 + w); ++c) m.set(r, c);
    return m;
  }

 private:
  std::size_t rows_, cols_;
  std::vector<std::uint8_t> bits_;
};

/// mean^2 / unbiased variance over the masked pixels; kInfiniteEnl when the
/// variance is zero.
inline double enl(const Image2D& image, const RegionMask& mask) {
  if (mask.rows() != image.rows() || mask.cols() != image.cols()) throw ShapeError("enl: mask size differs");
  std::vector<double> values;
  for (std::size_t i = 0; i < image.size(); ++i)
    if (mask.test(i)) values.push_back(image[i]);
  if (values.size() < kMinMaskPixels)
    throw ConfigError("enl: mask covers " + std::to_string(values.size()) + " pixels, need " +
                      std::to_string(kMinMaskPixels));
  const auto mv = mean_variance(values);
  if (mv.variance == 0.0) return kInfiniteEnl;
  return mv.mean * mv.mean / mv.variance;
}

inline double enl(const Image2D& image) {
  RegionMask all(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) all.set(i);
  return enl(image, all);
}

inline Image2D ratio_image(const Image2D& noisy, const Image2D& filtered, double div_eps = 1e-6) {
  require_same_shape(noisy, filtered, "ratio_image");
  if (!(div_eps > 0.0)) throw ConfigError("ratio_image: div_eps must be > 0");
  Image2D out(noisy.rows(), noisy.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = noisy[i] / (std::max(filtered[i], 0.0) + div_eps);
  return out;
}

/// Grey levels in [0, levels) after clipping to mean +/- 3 std; nullopt for a
/// constant image.
inline std::optional<std::vector<std::size_t>> quantize(const Image2D& image, std::size_t levels) {
  const double n = static_cast<double>(image.size());
  double sum = 0.0;
  for (double v : image.data()) sum += v;
  const double mean = sum / n;
  double sq = 0.0;
  for (double v : image.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / n);
  if (!(sd > 0.0)) return std::nullopt;
  const double lo = mean - 3.0 * sd, hi = mean + 3.0 * sd;
  std::vector<std::size_t> q(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double t = (std::clamp(image[i], lo, hi) - lo) / (hi - lo);
    q[i] = std::min(levels - 1, static_cast<std::size_t>(t * static_cast<double>(levels)));
  }
  return q;
}

inline double glcm_homogeneity(const Image2D& image, std::size_t levels = kDefaultGlcmLevels,
                               const std::vector<Offset>& offsets = default_offsets()) {
  if (levels < 2) throw ConfigError("glcm_homogeneity: levels must be >= 2");
  if (offsets.empty()) throw ConfigError("glcm_homogeneity: no offsets");
  const auto q = quantize(image, levels);
  if (!q) return 1.0;
  const auto rows = static_cast<std::ptrdiff_t>(image.rows());
  const auto cols = static_cast<std::ptrdiff_t>(image.cols());
  double acc = 0.0;
  std::size_t used = 0;
  std::vector<double> glcm(levels * levels);
  for (const auto& off : offsets) {
    std::fill(glcm.begin(), glcm.end(), 0.0);
    double mass = 0.0;
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      const std::ptrdiff_t r2 = r + off.dr;
      if (r2 < 0 || r2 >= rows) continue;
      for (std::ptrdiff_t c = 0; c < cols; ++c) {
        const std::ptrdiff_t c2 = c + off.dc;
        if (c2 < 0 || c2 >= cols) continue;
        const std::size_t a = (*q)[static_cast<std::size_t>(r * cols + c)];
        const std::size_t b = (*q)[static_cast<std::size_t>(r2 * cols + c2)];
        glcm[a * levels + b] += 1.0;
        glcm[b * levels + a] += 1.0;
        mass += 2.0;
      }
    }
    if (mass == 0.0) continue;
    double h = 0.0;
    for (std::size_t i = 0; i < levels; ++i)
      for (std::size_t j = 0; j < levels; ++j) {
        const double diff = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
        h += glcm[i * levels + j] / mass / (1.0 + diff);
      }
    acc += h;
    ++used;
  }
  if (used == 0) throw ShapeError("glcm_homogeneity: image too small for every offset");
  return acc / static_cast<double>(used);
}

struct MetricReport {
  std::vector<double> enl_per_region;  ///< ENL of the ratio image inside each mask
  double ratio_mean = 0.0;
  double ratio_enl = 0.0;
  double glcm_homogeneity_ratio = 0.0;
  double glcm_homogeneity_reference = 0.0;
  double enl_term = 0.0;
  double homogeneity_term = 0.0;
  double m_index = 0.0;
  double looks = 1.0;
  std::optional<double> psnr;
};

struct MIndexOptions {
  std::size_t levels = kDefaultGlcmLevels;
  std::vector<Offset> offsets = default_offsets();
  double div_eps = 1e-6;
};

inline MetricReport m_index(const Image2D& noisy, const Image2D& filtered, Looks looks,
                            const std::vector<RegionMask>& masks, Rng& rng, const MIndexOptions& opt = {}) {
  require_same_shape(noisy, filtered, "m_index");
  if (masks.empty()) throw ConfigError("m_index: at least one homogeneous mask is required");
  const double L = looks.value();
  MetricReport rep;
  rep.looks = L;

  const Image2D ratio = ratio_image(noisy, filtered, opt.div_eps);
  const auto mv = mean_variance(ratio.data());
  rep.ratio_mean = mv.mean;
  rep.ratio_enl = mv.variance == 0.0 ? kInfiniteEnl : mv.mean * mv.mean / mv.variance;

  double dev_sum = 0.0;
  for (const auto& m : masks) {
    const double e = enl(ratio, m);
    rep.enl_per_region.push_back(e);
    dev_sum += std::isfinite(e) ? std::min(std::abs(e - L) / L, kEnlDeviationCap) : kEnlDeviationCap;
  }
  rep.enl_term = 50.0 * dev_sum / static_cast<double>(masks.size());

  rep.glcm_homogeneity_ratio = glcm_homogeneity(ratio, opt.levels, opt.offsets);
  const Image2D reference = sample_speckle(noisy.rows(), noisy.cols(), looks, rng);
  rep.glcm_homogeneity_reference = glcm_homogeneity(reference, opt.levels, opt.offsets);
  rep.homogeneity_term = 50.0 * std::abs(rep.glcm_homogeneity_ratio - rep.glcm_homogeneity_reference) /
                         rep.glcm_homogeneity_reference;
  rep.m_index = rep.enl_term + rep.homogeneity_term;
  return rep;
}

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

inline double psnr(const Image2D& a, const Image2D& b, double peak = 1.0) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be > 0");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  const double m = sum / static_cast<double>(a.size());
  if (m == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / m);
}

/// Homogeneous regions of a clean image: pixels whose (2*radius+1)^2 window
/// variance is below `threshold`, split into 4-connected components; components
/// smaller than kMinMaskPixels are dropped.
inline std::vector<RegionMask> homogeneous_masks(const Image2D& clean, double threshold = 1e-6,
                                                 std::size_t radius = 2) {
  const std::size_t rows = clean.rows(), cols = clean.cols();
  std::vector<std::uint8_t> flat(rows * cols, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (r < radius || c < radius || r + radius >= rows || c + radius >= cols) continue;
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = r - radius; i <= r + radius; ++i)
        for (std::size_t j = c - radius; j <= c + radius; ++j) {
          s += clean(i, j);
          s2 += clean(i, j) * clean(i, j);
        }
      const double n = static_cast<double>((2 * radius + 1) * (2 * radius + 1));
      const double var = std::max(0.0, s2 / n - (s / n) * (s / n));
      if (var < threshold) flat[r * cols + c] = 1;
    }

  std::vector<RegionMask> masks;
  std::vector<std::uint8_t> seen(rows * cols, 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < rows * cols; ++start) {
    if (!flat[start] || seen[start]) continue;
    RegionMask m(rows, cols);
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      m.set(p);
      const std::size_t r = p / cols, c = p % cols;
      auto visit = [&](std::size_t q) {
        if (flat[q] && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (r > 0) visit(p - cols);
      if (r + 1 < rows) visit(p + cols);
      if (c > 0) visit(p - 1);
      if (c + 1 < cols) visit(p + 1);
    }
    if (m.count() >= kMinMaskPixels) masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace despeckle
