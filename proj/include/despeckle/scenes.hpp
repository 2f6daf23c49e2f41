#pragma once

// Procedural clean scenes: flat background, axis-aligned blocks, disks,
// bright linear features and one ramp. Intensities stay in [0.05, 1] so ratio
// images are well defined. Used as a stand-in corpus for tests and demos.

#include <algorithm>
#include <cmath>

#include "despeckle/image.hpp"
#include "despeckle/rng.hpp"

namespace despeckle {

inline Image2D synthetic_scene(std::size_t rows, std::size_t cols, Rng& rng) {
  auto level = [&] { return 0.05 + 0.95 * rng.uniform(); };
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.below(n)); };
  Image2D img(rows, cols, 0.15 + 0.35 * rng.uniform());

  const std::size_t blocks = 3 + pick(5);
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::size_t h = std::max<std::size_t>(2, rows / 8 + pick(std::max<std::size_t>(1, rows / 3)));
    const std::size_t w = std::max<std::size_t>(2, cols / 8 + pick(std::max<std::size_t>(1, cols / 3)));
    const std::size_t r0 = pick(rows), c0 = pick(cols);
    const double v = level();
    for (std::size_t r = r0; r < std::min(rows, r0 + h); ++r)
      for (std::size_t c = c0; c < std::min(cols, c0 + w); ++c) img(r, c) = v;
  }

  const std::size_t disks = 1 + pick(3);
  for (std::size_t i = 0; i < disks; ++i) {
    const double cr = rng.uniform() * static_cast<double>(rows);
    const double cc = rng.uniform() * static_cast<double>(cols);
    const double rad = (0.05 + 0.12 * rng.uniform()) * static_cast<double>(std::min(rows, cols));
    const double v = level();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
        if (dr * dr + dc * dc <= rad * rad) img(r, c) = v;
      }
  }

  // ramp block
  {
    const std::size_t h = std::max<std::size_t>(2, rows / 6), w = std::max<std::size_t>(2, cols / 4);
    const std::size_t r0 = pick(rows), c0 = pick(cols);
    const double a = level(), b = level();
    for (std::size_t r = r0; r < std::min(rows, r0 + h); ++r)
      for (std::size_t c = c0; c < std::min(cols, c0 + w); ++c)
        img(r, c) = a + (b - a) * static_cast<double>(c - c0) / static_cast<double>(w);
  }

  // thin bright "roads"
  const std::size_t lines = 1 + pick(3);
  for (std::size_t i = 0; i < lines; ++i) {
    const bool horizontal = rng.uniform() < 0.5;
    const std::size_t width = 1 + pick(3);
    const std::size_t at = pick(horizontal ? rows : cols);
    const double v = 0.8 + 0.2 * rng.uniform();
    for (std::size_t k = at; k < std::min(horizontal ? rows : cols, at + width); ++k)
      for (std::size_t j = 0; j < (horizontal ? cols : rows); ++j)
        (horizontal ? img(k, j) : img(j, k)) = v;
  }
  return img;
}

}  // namespace despeckle
