#pragma once

// Feed-forward despeckling network: a chain of same-padded convolutions, each
// optionally followed by batch normalization and ReLU. The output is the
// clean-image estimate itself (no residual connection).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "despeckle/activation.hpp"
#include "despeckle/batchnorm.hpp"
#include "despeckle/conv.hpp"
#include "despeckle/errors.hpp"
#include "despeckle/rng.hpp"
#include "despeckle/tensor.hpp"

namespace despeckle {

struct LayerSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  bool has_bn = false;
  bool has_relu = false;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureSpec {
  std::vector<LayerSpec> layers;

  /// depth layers of `features` maps: a linear first layer, depth - 2
  /// conv+BN+ReLU blocks and a linear single-map output layer.
  static ArchitectureSpec plain(std::size_t depth, std::size_t features, std::size_t kernel = 3) {
    if (depth < 2) throw ConfigError("architecture needs at least two layers");
    if (features < 1) throw ConfigError("architecture needs at least one feature map");
    ArchitectureSpec a;
    a.layers.push_back({1, features, kernel, false, false});
    for (std::size_t i = 0; i + 2 < depth; ++i) a.layers.push_back({features, features, kernel, true, true});
    a.layers.push_back({features, 1, kernel, false, false});
    return a;
  }

  /// Ten 3x3 layers, 64 maps, batch norm and ReLU on layers 2 to 9.
  static ArchitectureSpec standard() { return plain(10, 64, 3); }

  void validate() const {
    if (layers.empty()) throw ConfigError("architecture has no layers");
    if (layers.front().in_channels != 1) throw ConfigError("first layer must take one channel");
    if (layers.back().out_channels != 1) throw ConfigError("last layer must produce one channel");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.in_channels == 0 || l.out_channels == 0) throw ConfigError("layer with zero channels");
      if (l.kernel == 0 || l.kernel % 2 == 0)
        throw ConfigError("layer " + std::to_string(i + 1) + ": kernel size must be odd");
      if (i > 0 && layers[i - 1].out_channels != l.in_channels)
        throw ConfigError("layers " + std::to_string(i) + " and " + std::to_string(i + 1) +
                          " are not channel compatible");
    }
  }

  /// Half-width of the receptive field: a change at distance > radius never
  /// reaches an output pixel.
  std::size_t receptive_radius() const {
    std::size_t r = 0;
    for (const auto& l : layers) r += (l.kernel - 1) / 2;
    return r;
  }

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

struct NetworkParams {
  ArchitectureSpec arch;
  std::vector<ConvLayerParams> layers;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// Learnable arrays in a fixed order: per layer kernels, bias (when present),
/// then gamma and beta (when batch-normalized).
inline std::vector<std::span<double>> parameter_views(NetworkParams& net) {
  std::vector<std::span<double>> views;
  for (auto& l : net.layers) {
    views.push_back(l.kernels.data());
    if (l.has_bias()) views.emplace_back(l.bias);
    if (l.bn) {
      views.emplace_back(l.bn->gamma);
      views.emplace_back(l.bn->beta);
    }
  }
  return views;
}

struct ParameterCount {
  std::size_t weights = 0;       ///< kernel entries
  std::size_t biases = 0;
  std::size_t bn_affine = 0;     ///< gamma + beta
  std::size_t bn_running = 0;    ///< running mean + running variance

  std::size_t learnable() const noexcept { return weights + biases + bn_affine; }
  std::size_t stored() const noexcept { return learnable() + bn_running; }
};

/// Closed-form count from the layer descriptors alone.
inline ParameterCount count_parameters(const ArchitectureSpec& arch) {
  ParameterCount c;
  for (const auto& l : arch.layers) {
    c.weights += l.out_channels * l.in_channels * l.kernel * l.kernel;
    if (!l.has_bn) c.biases += l.out_channels;
    if (l.has_bn) {
      c.bn_affine += 2 * l.out_channels;
      c.bn_running += 2 * l.out_channels;
    }
  }
  return c;
}

inline void validate_params(const NetworkParams& net) {
  net.arch.validate();
  if (net.layers.size() != net.arch.layers.size())
    throw ShapeError("network has " + std::to_string(net.layers.size()) + " layers, architecture " +
                     std::to_string(net.arch.layers.size()));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& spec = net.arch.layers[i];
    const auto& l = net.layers[i];
    l.validate();
    const Dims expect{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    if (l.kernels.dims() != expect || l.bn.has_value() != spec.has_bn || l.has_bias() == spec.has_bn)
      throw ShapeError("layer " + std::to_string(i + 1) + " does not conform to its descriptor");
  }
}

/// He initialization: kernels ~ N(0, 2 / fan_in), fan_in = in_channels * K^2.
inline NetworkParams build_network(const ArchitectureSpec& arch, Rng& rng) {
  arch.validate();
  NetworkParams net{arch, {}};
  for (const auto& spec : arch.layers) {
    ConvLayerParams l;
    l.kernels = Tensor4(Dims{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
    const double stddev = std::sqrt(2.0 / static_cast<double>(spec.in_channels * spec.kernel * spec.kernel));
    for (double& w : l.kernels.data()) w = stddev * rng.normal();
    if (spec.has_bn)
      l.bn = BatchNormState::identity(spec.out_channels);
    else
      l.bias.assign(spec.out_channels, 0.0);
    net.layers.push_back(std::move(l));
  }
  return net;
}

/// Starts the output layer near a constant prediction: its bias is set to
/// `bias` and its kernels are multiplied by `kernel_scale`. With the bias at
/// the mean clean intensity the first estimates are positive everywhere, which
/// keeps the ratio term of the composite cost well conditioned.
inline void init_output_layer(NetworkParams& net, double bias, double kernel_scale) {
  if (net.layers.empty()) throw ConfigError("init_output_layer: network has no layers");
  if (!std::isfinite(bias) || !std::isfinite(kernel_scale))
    throw ConfigError("init_output_layer: bias and scale must be finite");
  auto& out = net.layers.back();
  if (!out.has_bias()) throw ConfigError("init_output_layer: output layer has no bias");
  for (double& b : out.bias) b = bias;
  for (double& w : out.kernels.data()) w *= kernel_scale;
}

/// Per-layer activations kept for the backward pass.
struct LayerTrace {
  Tensor4 input;
  Tensor4 pre_bn;  ///< conv output; only filled for batch-normalized layers
};

struct ForwardPass {
  Tensor4 output;
  std::vector<LayerTrace> trace;
  std::vector<std::optional<BatchNormState>> bn_states;  ///< running statistics after this batch
};

inline void check_network_input(const Tensor4& batch) {
  if (batch.dims().channels != 1)
    throw ShapeError("network input must have one channel, got " + std::to_string(batch.dims().channels));
}

/// Train-mode pass that records what backward() needs.
inline ForwardPass forward_train(const NetworkParams& net, const Tensor4& batch) {
  check_network_input(batch);
  ForwardPass pass;
  pass.trace.reserve(net.layers.size());
  Tensor4 x = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    const auto& spec = net.arch.layers[i];
    LayerTrace t{x, Tensor4()};
    Tensor4 z = conv2d_forward(x, layer);
    if (layer.bn) {
      auto bn = batchnorm_forward(z, *layer.bn, Mode::train);
      t.pre_bn = std::move(z);
      z = std::move(bn.output);
      pass.bn_states.emplace_back(std::move(bn.state));
    } else {
      pass.bn_states.emplace_back(std::nullopt);
    }
    if (spec.has_relu) z = relu(z);
    pass.trace.push_back(std::move(t));
    x = std::move(z);
  }
  pass.output = std::move(x);
  return pass;
}

/// Pure function of (net, batch). In train mode batch statistics are used and
/// the running-statistic update is discarded.
inline Tensor4 forward(const NetworkParams& net, const Tensor4& batch, Mode mode) {
  if (mode == Mode::train) return forward_train(net, batch).output;
  check_network_input(batch);
  Tensor4 x = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    Tensor4 z = conv2d_forward(x, layer);
    if (layer.bn) z = batchnorm_forward(z, *layer.bn, Mode::infer).output;
    if (net.arch.layers[i].has_relu) z = relu(z);
    x = std::move(z);
  }
  return x;
}

/// Gradients of the loss with respect to every learnable array, in
/// parameter_views() order, given dLoss/dOutput.
inline std::vector<std::vector<double>> backward(const NetworkParams& net, const ForwardPass& pass,
                                                 const Tensor4& grad_output) {
  if (grad_output.dims() != pass.output.dims())
    throw ShapeError("backward: gradient dims " + to_string(grad_output.dims()) +
                     " differ from output dims " + to_string(pass.output.dims()));
  std::vector<std::vector<std::vector<double>>> per_layer(net.layers.size());
  Tensor4 grad = grad_output;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const auto& layer = net.layers[i];
    const auto& t = pass.trace[i];
    if (net.arch.layers[i].has_relu) {
      const Tensor4& post = (i + 1 < net.layers.size()) ? pass.trace[i + 1].input : pass.output;
      grad = relu_backward(post, grad);
    }
    std::vector<double> grad_gamma, grad_beta;
    if (layer.bn) {
      auto g = batchnorm_backward(t.pre_bn, *layer.bn, grad);
      grad = std::move(g.grad_input);
      grad_gamma = std::move(g.grad_gamma);
      grad_beta = std::move(g.grad_beta);
    }
    auto cg = conv2d_backward(t.input, layer, grad, i > 0);
    auto& out = per_layer[i];
    out.push_back(std::move(cg.grad_kernels.storage()));
    if (layer.has_bias()) out.push_back(std::move(cg.grad_bias));
    if (layer.bn) {
      out.push_back(std::move(grad_gamma));
      out.push_back(std::move(grad_beta));
    }
    grad = std::move(cg.grad_input);
  }
  std::vector<std::vector<double>> grads;
  for (auto& layer_grads : per_layer)
    for (auto& g : layer_grads) grads.push_back(std::move(g));
  return grads;
}

/// L2 norm of each layer's kernels, for diagnostics.
inline std::vector<double> layer_norms(const NetworkParams& net) {
  std::vector<double> norms;
  for (const auto& l : net.layers) {
    double s = 0.0;
    for (double w : l.kernels.data()) s += w * w;
    norms.push_back(std::sqrt(s));
  }
  return norms;
}

}  // namespace despeckle
