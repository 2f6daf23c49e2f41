#pragma once

// Per-channel batch normalization over (batch, row, col).
//
// Train mode normalizes with the biased batch variance and folds the batch
// statistics into the running estimates with an exponential moving average
// (running = (1 - m) * running + m * batch, unbiased variance). Infer mode
// uses the running estimates only.

#include <cmath>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/tensor.hpp"

namespace despeckle {

enum class Mode { train, infer };

struct BatchNormState {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;
  double momentum_bn = 0.1;

  static BatchNormState identity(std::size_t channels) {
    BatchNormState s;
    s.gamma.assign(channels, 1.0);
    s.beta.assign(channels, 0.0);
    s.running_mean.assign(channels, 0.0);
    s.running_var.assign(channels, 1.0);
    return s;
  }

  std::size_t channels() const noexcept { return gamma.size(); }

  void validate() const {
    const std::size_t c = gamma.size();
    if (beta.size() != c || running_mean.size() != c || running_var.size() != c)
      throw ShapeError("BatchNormState: vectors differ in length");
    for (double v : running_var)
      if (!(v >= 0.0)) throw NumericError("BatchNormState: negative running variance");
    if (!(epsilon > 0.0)) throw ConfigError("BatchNormState: epsilon must be > 0");
    if (!(momentum_bn > 0.0 && momentum_bn < 1.0))
      throw ConfigError("BatchNormState: momentum must lie in (0, 1)");
  }

  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

struct BatchNormResult {
  Tensor4 output;
  BatchNormState state;  ///< updated running statistics in train mode, unchanged otherwise
};

namespace detail {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

inline ChannelStats channel_stats(const Tensor4& x) {
  const Dims& d = x.dims();
  const double n = static_cast<double>(d.batch * d.plane());
  ChannelStats s{std::vector<double>(d.channels, 0.0), std::vector<double>(d.channels, 0.0)};
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b)
      for (double v : x.plane(b, c)) sum += v;
    const double mean = sum / n;
    double sq = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b)
      for (double v : x.plane(b, c)) sq += (v - mean) * (v - mean);
    s.mean[c] = mean;
    s.var[c] = sq / n;
  }
  return s;
}

inline void check_channels(const Tensor4& x, const BatchNormState& state) {
  state.validate();
  if (x.dims().channels != state.channels())
    throw ShapeError("batchnorm: input has " + std::to_string(x.dims().channels) +
                     " channels, state has " + std::to_string(state.channels()));
}

inline void check_batch(const Tensor4& x) {
  if (x.dims().batch * x.dims().plane() < 2)
    throw DegenerateBatchError("batchnorm: train mode needs at least two values per channel");
}

}  // namespace detail

inline BatchNormResult batchnorm_forward(const Tensor4& input, const BatchNormState& state,
                                         Mode mode) {
  detail::check_channels(input, state);
  const Dims& d = input.dims();
  BatchNormResult result{Tensor4(d), state};

  std::vector<double> mean, var;
  if (mode == Mode::train) {
    detail::check_batch(input);
    auto stats = detail::channel_stats(input);
    mean = std::move(stats.mean);
    var = std::move(stats.var);
    const double n = static_cast<double>(d.batch * d.plane());
    const double m = state.momentum_bn;
    for (std::size_t c = 0; c < d.channels; ++c) {
      result.state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mean[c];
      result.state.running_var[c] = (1.0 - m) * state.running_var[c] + m * var[c] * n / (n - 1.0);
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  for (std::size_t c = 0; c < d.channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + state.epsilon);
    const double scale = state.gamma[c] * inv_std;
    const double shift = state.beta[c] - mean[c] * scale;
    for (std::size_t b = 0; b < d.batch; ++b) {
      auto src = input.plane(b, c);
      auto dst = result.output.plane(b, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return result;
}

struct BatchNormGrads {
  Tensor4 grad_input;
  std::vector<double> grad_gamma;
  std::vector<double> grad_beta;
};

/// Adjoint of the train-mode forward pass. Batch statistics are recomputed
/// from `input`, so the result depends only on (input, gamma, epsilon, grad_out).
inline BatchNormGrads batchnorm_backward(const Tensor4& input, const BatchNormState& state,
                                         const Tensor4& grad_out) {
  detail::check_channels(input, state);
  if (grad_out.dims() != input.dims())
    throw ShapeError("batchnorm_backward: grad_out dims " + to_string(grad_out.dims()) +
                     " differ from input dims " + to_string(input.dims()));
  detail::check_batch(input);
  const Dims& d = input.dims();
  const double n = static_cast<double>(d.batch * d.plane());
  const auto stats = detail::channel_stats(input);

  BatchNormGrads g{Tensor4(d), std::vector<double>(d.channels, 0.0),
                   std::vector<double>(d.channels, 0.0)};
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(stats.var[c] + state.epsilon);
    const double mean = stats.mean[c];
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      auto x = input.plane(b, c);
      auto dy = grad_out.plane(b, c);
      for (std::size_t i = 0; i < x.size(); ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mean) * inv_std;
      }
    }
    g.grad_beta[c] = sum_dy;
    g.grad_gamma[c] = sum_dy_xhat;
    const double k = state.gamma[c] * inv_std / n;
    for (std::size_t b = 0; b < d.batch; ++b) {
      auto x = input.plane(b, c);
      auto dy = grad_out.plane(b, c);
      auto dx = g.grad_input.plane(b, c);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double xhat = (x[i] - mean) * inv_std;
        dx[i] = k * (n * dy[i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
  return g;
}

}  // namespace despeckle
