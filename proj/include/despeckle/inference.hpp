#pragma once

// Whole-image inference by overlapping tiles.
//
// Tiles of `tile` pixels start every tile - overlap pixels (the last one is
// pulled back to end at the image border). Each tile contributes only its
// core, i.e. the tile minus overlap / 2 pixels on every side that faces
// another tile; where cores still overlap (next to the pulled-back tile) the
// contributions are averaged uniformly. With a receptive radius of at most
// overlap / 2 the result equals a single untiled pass.

#include <algorithm>
#include <vector>

#include "despeckle/image.hpp"
#include "despeckle/network.hpp"

namespace despeckle {

inline Image2D run_network(const NetworkParams& net, const Image2D& image) {
  Tensor4 in(Dims{1, 1, image.rows(), image.cols()},
             std::vector<double>(image.data().begin(), image.data().end()));
  const Tensor4 out = forward(net, in, Mode::infer);
  return Image2D(image.rows(), image.cols(), out.storage());
}

namespace detail {

struct Span1D {
  std::size_t start, size, core_begin, core_end;
};

inline std::vector<Span1D> tile_spans(std::size_t extent, std::size_t tile, std::size_t overlap) {
  if (extent <= tile) return {{0, extent, 0, extent}};
  const std::size_t stride = tile - overlap;
  const std::size_t margin = overlap / 2;
  std::vector<Span1D> spans;
  for (std::size_t start = 0;; start += stride) {
    const std::size_t s = std::min(start, extent - tile);
    const std::size_t end = s + tile;
    spans.push_back({s, tile, s == 0 ? 0 : s + margin, end == extent ? end : end - margin});
    if (end == extent) break;
  }
  return spans;
}

}  // namespace detail

inline Image2D despeckle_image(const NetworkParams& net, const Image2D& image, std::size_t tile = 256,
                               std::size_t overlap = 16) {
  if (tile <= 2 * overlap) throw ConfigError("despeckle_image: tile must exceed twice the overlap");
  Image2D result(image.rows(), image.cols());
  if (image.rows() <= tile && image.cols() <= tile) {
    result = run_network(net, image);
  } else {
    Image2D weight(image.rows(), image.cols());
    for (const auto& rs : detail::tile_spans(image.rows(), tile, overlap)) {
      for (const auto& cs : detail::tile_spans(image.cols(), tile, overlap)) {
        const Image2D out = run_network(net, image.crop(rs.start, cs.start, rs.size, cs.size));
        for (std::size_t r = rs.core_begin; r < rs.core_end; ++r)
          for (std::size_t c = cs.core_begin; c < cs.core_end; ++c) {
            result(r, c) += out(r - rs.start, c - cs.start);
            weight(r, c) += 1.0;
          }
      }
    }
    for (std::size_t i = 0; i < result.size(); ++i) result[i] /= weight[i];
  }
  for (double& v : result.data()) v = std::max(v, 0.0);
  return result;
}

}  // namespace despeckle
