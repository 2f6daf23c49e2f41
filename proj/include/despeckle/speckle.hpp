#pragma once

// Fully developed multiplicative speckle: Y = X * N with N ~ Gamma(shape L,
// rate L), i.e. unit mean and variance 1/L, plus the patch sampler that turns
// a clean-image corpus into (clean, noisy, speckle) training triples.

#include <cstdint>
#include <functional>
#include <iostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"
#include "despeckle/rng.hpp"

namespace despeckle {

/// Number of looks. Real valued, at least 1.
class Looks {
 public:
  explicit Looks(double value) : value_(value) {
    if (!(value >= 1.0)) throw ConfigError("looks must be >= 1, got " + std::to_string(value));
  }
  double value() const noexcept { return value_; }
  friend bool operator==(const Looks&, const Looks&) = default;

 private:
  double value_;
};

inline Image2D sample_speckle(std::size_t rows, std::size_t cols, Looks looks, Rng& rng) {
  Image2D out(rows, cols);
  const double shape = looks.value();
  for (double& v : out.data()) v = rng.gamma(shape) / shape;
  return out;
}

inline Image2D corrupt(const Image2D& clean, const Image2D& speckle) {
  require_same_shape(clean, speckle, "corrupt");
  Image2D out(clean.rows(), clean.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clean[i] * speckle[i];
  return out;
}

struct Patch {
  Image2D clean;
  Image2D noisy;
  Image2D speckle;
};

struct PatchDataset {
  std::vector<Patch> patches;
  std::size_t patch_size = 0;
  Looks looks{1.0};
  std::uint64_t seed = 0;
  /// Index into the usable source list for each patch; not serialized.
  std::vector<std::size_t> source_index;

  std::size_t size() const noexcept { return patches.size(); }
  bool empty() const noexcept { return patches.empty(); }
};

using WarningSink = std::function<void(std::string_view)>;

inline void warn_to_stderr(std::string_view msg) { std::cerr << "warning: " << msg << '\n'; }

/// Draws patches one at a time: source image uniformly, then top-left corner
/// uniformly, then a fresh speckle field. Both choices are with replacement.
class PatchSampler {
 public:
  PatchSampler(std::span<const Image2D> images, std::size_t patch_size, Looks looks, Rng& rng,
               const WarningSink& warn = warn_to_stderr)
      : patch_size_(patch_size), looks_(looks), rng_(rng) {
    if (patch_size == 0) throw ConfigError("patch size must be >= 1");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].rows() < patch_size || images[i].cols() < patch_size) {
        if (warn)
          warn("skipping source image " + std::to_string(i) + " (" + std::to_string(images[i].rows()) +
               "x" + std::to_string(images[i].cols()) + " is smaller than patch " +
               std::to_string(patch_size) + ")");
        continue;
      }
      usable_.push_back(&images[i]);
      usable_index_.push_back(i);
    }
    if (usable_.empty()) throw EmptyCorpusError("no source image is large enough for the patch size");
  }

  std::size_t usable_count() const noexcept { return usable_.size(); }

  /// Returns the patch and the index of its source in the original list.
  std::pair<Patch, std::size_t> next() {
    const std::size_t pick = static_cast<std::size_t>(rng_.below(usable_.size()));
    const Image2D& src = *usable_[pick];
    const std::size_t r0 = static_cast<std::size_t>(rng_.below(src.rows() - patch_size_ + 1));
    const std::size_t c0 = static_cast<std::size_t>(rng_.below(src.cols() - patch_size_ + 1));
    Patch p;
    p.clean = src.crop(r0, c0, patch_size_, patch_size_);
    p.speckle = sample_speckle(patch_size_, patch_size_, looks_, rng_);
    p.noisy = corrupt(p.clean, p.speckle);
    return {std::move(p), usable_index_[pick]};
  }

 private:
  std::size_t patch_size_;
  Looks looks_;
  Rng& rng_;
  std::vector<const Image2D*> usable_;
  std::vector<std::size_t> usable_index_;
};

/// `images` are expected in [0, 1] (see normalize_unit). count == 0 yields an
/// empty dataset without inspecting the corpus.
inline PatchDataset build_patch_dataset(std::span<const Image2D> images, std::size_t count,
                                        std::size_t patch_size, Looks looks, Rng& rng,
                                        const WarningSink& warn = warn_to_stderr) {
  PatchDataset ds;
  ds.patch_size = patch_size;
  ds.looks = looks;
  ds.seed = rng.seed();
  if (count == 0) return ds;
  PatchSampler sampler(images, patch_size, looks, rng, warn);
  ds.patches.reserve(count);
  ds.source_index.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto [patch, source] = sampler.next();
    ds.patches.push_back(std::move(patch));
    ds.source_index.push_back(source);
  }
  return ds;
}

struct Scene {
  Image2D clean;
  Image2D noisy;
};

inline Scene make_homogeneous_scene(double value, std::size_t rows, std::size_t cols, Looks looks,
                                    Rng& rng) {
  if (!(value >= 0.0)) throw ConfigError("homogeneous scene value must be >= 0");
  Scene s{Image2D(rows, cols, value), Image2D(rows, cols)};
  s.noisy = corrupt(s.clean, sample_speckle(rows, cols, looks, rng));
  return s;
}

}  // namespace despeckle
