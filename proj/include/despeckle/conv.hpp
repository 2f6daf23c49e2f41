#pragma once

// Same-padded 2-D convolution (implemented as correlation, no kernel flip)
// and its exact adjoint. Zero padding of (K - 1) / 2 keeps the spatial size.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "despeckle/batchnorm.hpp"
#include "despeckle/errors.hpp"
#include "despeckle/tensor.hpp"

namespace despeckle {

/// Kernels are (out_channels, in_channels, K, K). Layers followed by batch
/// normalization carry no bias (it would be cancelled by the mean removal),
/// so `bias` is either out_channels long or empty.
struct ConvLayerParams {
  Tensor4 kernels;
  std::vector<double> bias;
  std::optional<BatchNormState> bn;

  std::size_t out_channels() const noexcept { return kernels.dims().batch; }
  std::size_t in_channels() const noexcept { return kernels.dims().channels; }
  std::size_t kernel_size() const noexcept { return kernels.dims().rows; }
  bool has_bias() const noexcept { return !bias.empty(); }

  void validate() const {
    const Dims& k = kernels.dims();
    if (k.rows != k.cols) throw ConfigError("conv: kernels must be square");
    if (k.rows % 2 == 0)
      throw ConfigError("conv: kernel size must be odd for same padding, got " +
                        std::to_string(k.rows));
    if (!bias.empty() && bias.size() != k.batch)
      throw ShapeError("conv: bias length " + std::to_string(bias.size()) +
                       " differs from out_channels " + std::to_string(k.batch));
    if (bn) {
      bn->validate();
      if (bn->channels() != k.batch) throw ShapeError("conv: batch-norm width differs from out_channels");
    }
  }

  friend bool operator==(const ConvLayerParams&, const ConvLayerParams&) = default;
};

namespace detail {

inline std::size_t checked_padding(const ConvLayerParams& layer, std::optional<std::size_t> padding) {
  layer.validate();
  const std::size_t same = (layer.kernel_size() - 1) / 2;
  if (padding && *padding != same)
    throw ConfigError("conv: only same padding (" + std::to_string(same) + ") is supported");
  return same;
}

inline void check_input(const Tensor4& input, const ConvLayerParams& layer) {
  if (input.dims().channels != layer.in_channels())
    throw ShapeError("conv: input has " + std::to_string(input.dims().channels) +
                     " channels, kernels expect " + std::to_string(layer.in_channels()));
}

// Valid index range [lo, hi) of output positions whose tap at offset k lands
// inside [0, extent).
struct TapRange {
  std::size_t lo, hi;
};

inline TapRange tap_range(std::size_t extent, std::size_t k, std::size_t pad) {
  // source = out + k - pad must lie in [0, extent)
  const std::size_t lo = k < pad ? pad - k : 0;
  const std::size_t shift_hi = extent + pad;
  const std::size_t hi = shift_hi > k ? std::min(extent, shift_hi - k) : 0;
  return {lo, std::max(lo, hi)};
}

}  // namespace detail

inline Tensor4 conv2d_forward(const Tensor4& input, const ConvLayerParams& layer,
                              std::optional<std::size_t> padding = std::nullopt) {
  const std::size_t pad = detail::checked_padding(layer, padding);
  detail::check_input(input, layer);
  const Dims& in = input.dims();
  const std::size_t out_ch = layer.out_channels();
  const std::size_t k = layer.kernel_size();
  Tensor4 out(Dims{in.batch, out_ch, in.rows, in.cols});

  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t m = 0; m < out_ch; ++m) {
      auto dst = out.plane(b, m);
      std::fill(dst.begin(), dst.end(), layer.has_bias() ? layer.bias[m] : 0.0);
      for (std::size_t n = 0; n < in.channels; ++n) {
        auto src = input.plane(b, n);
        for (std::size_t kr = 0; kr < k; ++kr) {
          const auto rows = detail::tap_range(in.rows, kr, pad);
          for (std::size_t kc = 0; kc < k; ++kc) {
            const double w = layer.kernels.at(m, n, kr, kc);
            if (w == 0.0) continue;
            const auto cols = detail::tap_range(in.cols, kc, pad);
            for (std::size_t r = rows.lo; r < rows.hi; ++r) {
              double* o = dst.data() + r * in.cols;
              const double* s = src.data() + (r + kr - pad) * in.cols;
              for (std::size_t c = cols.lo; c < cols.hi; ++c) o[c] += w * s[c + kc - pad];
            }
          }
        }
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor4 grad_input;
  Tensor4 grad_kernels;
  std::vector<double> grad_bias;  ///< empty when the layer has no bias
};

inline ConvGrads conv2d_backward(const Tensor4& input, const ConvLayerParams& layer,
                                 const Tensor4& grad_out, bool need_grad_input = true) {
  const std::size_t pad = detail::checked_padding(layer, std::nullopt);
  detail::check_input(input, layer);
  const Dims& in = input.dims();
  const std::size_t out_ch = layer.out_channels();
  const std::size_t k = layer.kernel_size();
  const Dims expected{in.batch, out_ch, in.rows, in.cols};
  if (grad_out.dims() != expected)
    throw ShapeError("conv2d_backward: grad_out dims " + to_string(grad_out.dims()) +
                     " differ from forward output dims " + to_string(expected));

  ConvGrads g{Tensor4(in), Tensor4(layer.kernels.dims()),
              std::vector<double>(layer.has_bias() ? out_ch : 0, 0.0)};

  if (layer.has_bias()) {
    for (std::size_t m = 0; m < out_ch; ++m) {
      double sum = 0.0;
      for (std::size_t b = 0; b < in.batch; ++b)
        for (double v : grad_out.plane(b, m)) sum += v;
      g.grad_bias[m] = sum;
    }
  }

  for (std::size_t m = 0; m < out_ch; ++m) {
    for (std::size_t n = 0; n < in.channels; ++n) {
      for (std::size_t kr = 0; kr < k; ++kr) {
        const auto rows = detail::tap_range(in.rows, kr, pad);
        for (std::size_t kc = 0; kc < k; ++kc) {
          const auto cols = detail::tap_range(in.cols, kc, pad);
          double sum = 0.0;
          for (std::size_t b = 0; b < in.batch; ++b) {
            const double* go = grad_out.plane(b, m).data();
            const double* src = input.plane(b, n).data();
            for (std::size_t r = rows.lo; r < rows.hi; ++r) {
              const double* gr = go + r * in.cols;
              const double* s = src + (r + kr - pad) * in.cols;
              for (std::size_t c = cols.lo; c < cols.hi; ++c) sum += gr[c] * s[c + kc - pad];
            }
          }
          g.grad_kernels.at(m, n, kr, kc) = sum;
        }
      }
    }
  }

  if (need_grad_input) {
    for (std::size_t b = 0; b < in.batch; ++b) {
      for (std::size_t n = 0; n < in.channels; ++n) {
        double* gi = g.grad_input.plane(b, n).data();
        for (std::size_t m = 0; m < out_ch; ++m) {
          const double* go = grad_out.plane(b, m).data();
          for (std::size_t kr = 0; kr < k; ++kr) {
            const auto rows = detail::tap_range(in.rows, kr, pad);
            for (std::size_t kc = 0; kc < k; ++kc) {
              const double w = layer.kernels.at(m, n, kr, kc);
              if (w == 0.0) continue;
              const auto cols = detail::tap_range(in.cols, kc, pad);
              for (std::size_t r = rows.lo; r < rows.hi; ++r) {
                const double* gr = go + r * in.cols;
                double* d = gi + (r + kr - pad) * in.cols;
                for (std::size_t c = cols.lo; c < cols.hi; ++c) d[c + kc - pad] += w * gr[c];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

}  // namespace despeckle
