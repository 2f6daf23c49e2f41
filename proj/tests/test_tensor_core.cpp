#include <gtest/gtest.h>

#include <cmath>

#include "despeckle/activation.hpp"
#include "despeckle/batchnorm.hpp"
#include "despeckle/conv.hpp"
#include "despeckle/gradcheck.hpp"
#include "despeckle/optimizer.hpp"
#include "test_util.hpp"

using namespace despeckle;
using despeckle::testing::dot;
using despeckle::testing::half_sum_sq;
using despeckle::testing::random_tensor;

namespace {

ConvLayerParams make_layer(std::size_t out, std::size_t in, std::size_t k, double fill = 0.0) {
  return ConvLayerParams{Tensor4(Dims{out, in, k, k}, fill), std::vector<double>(out, 0.0), std::nullopt};
}

ConvLayerParams delta_layer(std::size_t k) {
  auto l = make_layer(1, 1, k);
  l.kernels.at(0, 0, k / 2, k / 2) = 1.0;
  return l;
}

Tensor4 grid3() { return Tensor4(Dims{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}); }

}  // namespace

TEST(Tensor4, RejectsZeroDimsAndWrongLength) {
  EXPECT_THROW(Tensor4(Dims{0, 1, 1, 1}), ShapeError);
  EXPECT_THROW(Tensor4(Dims{1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_EQ(Tensor4(Dims{2, 3, 4, 5}).size(), 120u);
}

TEST(Conv2dForward, ZeroKernelGivesZeroOutput) {
  const auto out = conv2d_forward(Tensor4(Dims{1, 1, 3, 3}, 1.0), make_layer(1, 1, 3));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dForward, DeltaKernelIsIdentity) {
  Rng rng(1);
  const auto x = random_tensor(Dims{2, 1, 7, 5}, rng);
  EXPECT_EQ(conv2d_forward(x, delta_layer(3)), x);
  EXPECT_EQ(conv2d_forward(x, delta_layer(5)), x);
}

TEST(Conv2dForward, OnesKernelSumsTheWindow) {
  const auto out = conv2d_forward(grid3(), make_layer(1, 1, 3, 1.0), std::size_t{1});
  EXPECT_DOUBLE_EQ(out.at(0, 0, 1, 1), 45.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 0), 12.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 2, 2), 5 + 6 + 8 + 9);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 1), 1 + 2 + 3 + 4 + 5 + 6);
}

TEST(Conv2dForward, IsCorrelationNotConvolution) {
  auto l = make_layer(1, 1, 3);
  l.kernels.at(0, 0, 1, 2) = 1.0;  // picks the right-hand neighbour
  const auto out = conv2d_forward(grid3(), l);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 2), 0.0);
}

TEST(Conv2dForward, BiasAndChannelSum) {
  auto l = make_layer(2, 2, 1, 1.0);
  l.bias = {0.5, -1.0};
  Tensor4 x(Dims{1, 2, 1, 2}, {1, 2, 10, 20});
  const auto out = conv2d_forward(x, l);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 0), 11.5);
  EXPECT_DOUBLE_EQ(out.at(0, 1, 0, 1), 21.0);
}

TEST(Conv2dForward, Errors) {
  EXPECT_THROW(conv2d_forward(Tensor4(Dims{1, 2, 3, 3}), make_layer(1, 1, 3)), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor4(Dims{1, 1, 3, 3}), make_layer(1, 1, 2)), ConfigError);
  EXPECT_THROW(conv2d_forward(Tensor4(Dims{1, 1, 3, 3}), make_layer(1, 1, 3), std::size_t{0}), ConfigError);
}

TEST(Conv2dForward, LinearInInputForZeroBias) {
  Rng rng(2);
  auto l = make_layer(3, 2, 3);
  l.kernels = random_tensor(l.kernels.dims(), rng);
  const auto x = random_tensor(Dims{2, 2, 6, 5}, rng);
  const auto y = random_tensor(Dims{2, 2, 6, 5}, rng);
  const double a = 1.7, b = -0.3;
  Tensor4 combo(x.dims());
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * x[i] + b * y[i];
  const auto lhs = conv2d_forward(combo, l);
  const auto cx = conv2d_forward(x, l), cy = conv2d_forward(y, l);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double rhs = a * cx[i] + b * cy[i];
    EXPECT_LE(std::abs(lhs[i] - rhs), 1e-10 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(Conv2dBackward, ZeroCotangentGivesZeroGradients) {
  Rng rng(3);
  auto l = make_layer(2, 2, 3);
  l.kernels = random_tensor(l.kernels.dims(), rng);
  const auto x = random_tensor(Dims{1, 2, 4, 4}, rng);
  const auto g = conv2d_backward(x, l, Tensor4(Dims{1, 2, 4, 4}));
  for (double v : g.grad_input.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_kernels.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, DeltaKernelAdjointIsIdentity) {
  Rng rng(4);
  const auto x = random_tensor(Dims{1, 1, 5, 6}, rng);
  const auto go = random_tensor(Dims{1, 1, 5, 6}, rng);
  EXPECT_EQ(conv2d_backward(x, delta_layer(3), go).grad_input, go);
}

TEST(Conv2dBackward, BiasGradientSumsCotangent) {
  Rng rng(5);
  auto l = make_layer(2, 1, 3);
  const auto x = random_tensor(Dims{3, 1, 4, 4}, rng);
  const auto go = random_tensor(Dims{3, 2, 4, 4}, rng);
  const auto g = conv2d_backward(x, l, go);
  for (std::size_t m = 0; m < 2; ++m) {
    double s = 0.0;
    for (std::size_t b = 0; b < 3; ++b)
      for (double v : go.plane(b, m)) s += v;
    EXPECT_DOUBLE_EQ(g.grad_bias[m], s);
  }
}

TEST(Conv2dBackward, ShapeMismatch) {
  EXPECT_THROW(conv2d_backward(Tensor4(Dims{1, 1, 3, 3}), make_layer(2, 1, 3), Tensor4(Dims{1, 1, 3, 3})),
               ShapeError);
}

// Loss: sum(out^2) / 2, so grad_out = out.
TEST(Conv2dBackward, MatchesFiniteDifferences) {
  Rng rng(6);
  auto layer = make_layer(3, 2, 3);
  layer.kernels = random_tensor(layer.kernels.dims(), rng);
  for (double& b : layer.bias) b = rng.uniform() - 0.5;
  const auto x = random_tensor(Dims{1, 2, 5, 5}, rng);
  const auto out = conv2d_forward(x, layer);
  const auto g = conv2d_backward(x, layer, out);

  auto wrt_input = [&](std::span<const double> p) {
    Tensor4 xi(x.dims(), std::vector<double>(p.begin(), p.end()));
    return half_sum_sq(conv2d_forward(xi, layer).data());
  };
  EXPECT_LT(finite_diff_check(wrt_input, x.data(), g.grad_input.data(), 1e-5).max_relative_error, 1e-4);

  auto wrt_kernels = [&](std::span<const double> p) {
    auto l = layer;
    l.kernels = Tensor4(layer.kernels.dims(), std::vector<double>(p.begin(), p.end()));
    return half_sum_sq(conv2d_forward(x, l).data());
  };
  EXPECT_LT(finite_diff_check(wrt_kernels, layer.kernels.data(), g.grad_kernels.data(), 1e-5).max_relative_error,
            1e-4);

  auto wrt_bias = [&](std::span<const double> p) {
    auto l = layer;
    l.bias.assign(p.begin(), p.end());
    return half_sum_sq(conv2d_forward(x, l).data());
  };
  EXPECT_LT(finite_diff_check(wrt_bias, layer.bias, g.grad_bias, 1e-5).max_relative_error, 1e-4);
}

TEST(Relu, ForwardAndAdjoint) {
  const Tensor4 x(Dims{1, 1, 1, 3}, {-1, 0, 2});
  EXPECT_EQ(relu(x), Tensor4(Dims{1, 1, 1, 3}, {0, 0, 2}));
  EXPECT_EQ(relu_backward(x, Tensor4(Dims{1, 1, 1, 3}, {5, 5, 5})), Tensor4(Dims{1, 1, 1, 3}, {0, 0, 5}));
  const Tensor4 pos(Dims{1, 1, 1, 3}, {0.1, 3, 7});
  EXPECT_EQ(relu(pos), pos);
  EXPECT_THROW(relu_backward(x, Tensor4(Dims{1, 1, 1, 2})), ShapeError);
}

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  Rng rng(7);
  const auto x = random_tensor(Dims{4, 3, 5, 5}, rng, -2.0, 5.0);
  const auto r = batchnorm_forward(x, BatchNormState::identity(3), Mode::train);
  const double n = 4 * 25;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < 4; ++b)
      for (double v : r.output.plane(b, c)) {
        s += v;
        s2 += v * v;
      }
    const double mean = s / n;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(s2 / n - mean * mean, 1.0, 1e-3);
    EXPECT_LT(s2 / n - mean * mean, 1.0);  // epsilon shrinks the variance slightly
  }
}

TEST(BatchNorm, UpdatesRunningStatisticsByMovingAverage) {
  const Tensor4 x(Dims{2, 1, 1, 2}, {1, 3, 5, 7});
  const auto r = batchnorm_forward(x, BatchNormState::identity(1), Mode::train);
  // batch mean 4, unbiased variance 20/3
  EXPECT_DOUBLE_EQ(r.state.running_mean[0], 0.1 * 4.0);
  EXPECT_DOUBLE_EQ(r.state.running_var[0], 0.9 + 0.1 * 20.0 / 3.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(8);
  auto s = BatchNormState::identity(2);
  s.gamma = {0.0, 0.0};
  s.beta = {0.25, -1.5};
  const auto r = batchnorm_forward(random_tensor(Dims{2, 2, 3, 3}, rng), s, Mode::train);
  for (double v : r.output.plane(1, 0)) EXPECT_EQ(v, 0.25);
  for (double v : r.output.plane(0, 1)) EXPECT_EQ(v, -1.5);
}

TEST(BatchNorm, InferWithIdentityStatisticsIsIdentity) {
  Rng rng(9);
  auto s = BatchNormState::identity(2);
  s.epsilon = 1e-12;
  const auto x = random_tensor(Dims{2, 2, 3, 3}, rng);
  const auto r = batchnorm_forward(x, s, Mode::infer);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(r.output[i], x[i], 1e-6);
  EXPECT_EQ(r.state, s);
}

TEST(BatchNorm, Errors) {
  EXPECT_THROW(batchnorm_forward(Tensor4(Dims{1, 1, 1, 1}), BatchNormState::identity(1), Mode::train),
               DegenerateBatchError);
  EXPECT_NO_THROW(batchnorm_forward(Tensor4(Dims{1, 1, 1, 1}), BatchNormState::identity(1), Mode::infer));
  EXPECT_THROW(batchnorm_forward(Tensor4(Dims{1, 2, 2, 2}), BatchNormState::identity(1), Mode::train), ShapeError);
  EXPECT_THROW(batchnorm_backward(Tensor4(Dims{1, 1, 2, 2}), BatchNormState::identity(1), Tensor4(Dims{1, 1, 2, 1})),
               ShapeError);
}

TEST(BatchNormBackward, ZeroCotangentAndBetaGradient) {
  Rng rng(10);
  const auto x = random_tensor(Dims{2, 2, 3, 3}, rng);
  auto g0 = batchnorm_backward(x, BatchNormState::identity(2), Tensor4(x.dims()));
  for (double v : g0.grad_input.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g0.grad_gamma, std::vector<double>(2, 0.0));
  EXPECT_EQ(g0.grad_beta, std::vector<double>(2, 0.0));

  const auto go = random_tensor(x.dims(), rng);
  const auto g = batchnorm_backward(x, BatchNormState::identity(2), go);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
      for (double v : go.plane(b, c)) s += v;
    EXPECT_NEAR(g.grad_beta[c], s, 1e-12);
  }
}

TEST(BatchNormBackward, MatchesFiniteDifferences) {
  Rng rng(11);
  const auto x = random_tensor(Dims{4, 2, 5, 5}, rng, -1.0, 2.0);
  const auto w = random_tensor(x.dims(), rng);  // loss = <w, bn(x)>
  auto state = BatchNormState::identity(2);
  state.gamma = {1.3, 0.7};
  state.beta = {0.2, -0.4};
  const auto g = batchnorm_backward(x, state, w);

  auto wrt_input = [&](std::span<const double> p) {
    Tensor4 xi(x.dims(), std::vector<double>(p.begin(), p.end()));
    return dot(batchnorm_forward(xi, state, Mode::train).output.data(), w.data());
  };
  EXPECT_LT(finite_diff_check(wrt_input, x.data(), g.grad_input.data(), 1e-5).max_relative_error, 1e-4);

  auto wrt_gamma = [&](std::span<const double> p) {
    auto s = state;
    s.gamma.assign(p.begin(), p.end());
    return dot(batchnorm_forward(x, s, Mode::train).output.data(), w.data());
  };
  EXPECT_LT(finite_diff_check(wrt_gamma, state.gamma, g.grad_gamma, 1e-5).max_relative_error, 1e-4);
}

TEST(SgdMomentum, HandIteration) {
  std::vector<double> p{1.0};
  std::vector<std::span<double>> views{p};
  auto opt = OptimizerState::zeros_like(views);
  const std::vector<std::vector<double>> g{{1.0}};
  sgd_momentum_step(views, g, opt, 0.1, 0.9);
  EXPECT_NEAR(opt.velocity[0][0], -0.1, 1e-15);
  EXPECT_NEAR(p[0], 0.9, 1e-15);
  sgd_momentum_step(views, g, opt, 0.1, 0.9);
  EXPECT_NEAR(opt.velocity[0][0], -0.19, 1e-15);
  EXPECT_NEAR(p[0], 0.71, 1e-15);
}

TEST(SgdMomentum, ZeroMomentumIsPlainGradientDescentBitwise) {
  Rng rng(12);
  std::vector<double> p(50), expected(50);
  std::vector<std::vector<double>> g{std::vector<double>(50)};
  const double eta = 2e-6;
  for (std::size_t i = 0; i < 50; ++i) {
    p[i] = rng.normal();
    g[0][i] = rng.normal();
    expected[i] = p[i] - eta * g[0][i];
  }
  std::vector<std::span<double>> views{p};
  auto opt = OptimizerState::zeros_like(views);
  sgd_momentum_step(views, g, opt, eta, 0.0);
  EXPECT_EQ(p, expected);
}

TEST(SgdMomentum, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.5, -2.0};
  std::vector<std::span<double>> views{p};
  auto opt = OptimizerState::zeros_like(views);
  sgd_momentum_step(views, {{0.0, 0.0}}, opt, 0.5, 0.9);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
}

TEST(SgdMomentum, Errors) {
  std::vector<double> p{1.0};
  std::vector<std::span<double>> views{p};
  auto opt = OptimizerState::zeros_like(views);
  EXPECT_THROW(sgd_momentum_step(views, {{1.0, 2.0}}, opt, 0.1, 0.9), ShapeError);
  EXPECT_THROW(sgd_momentum_step(views, {{1.0}}, opt, 0.0, 0.9), ConfigError);
  EXPECT_THROW(sgd_momentum_step(views, {{1.0}}, opt, 0.1, 1.0), ConfigError);
}

TEST(FiniteDiffCheck, QuadraticAndConstant) {
  const std::vector<double> x{1.0, 2.0};
  auto sq = [](std::span<const double> p) { return p[0] * p[0] + p[1] * p[1]; };
  EXPECT_LT(finite_diff_check(sq, x, std::vector<double>{2.0, 4.0}, 1e-5).max_relative_error, 1e-8);
  auto c = [](std::span<const double>) { return 3.0; };
  EXPECT_EQ(finite_diff_check(c, x, std::vector<double>{0.0, 0.0}, 1e-5).max_relative_error, 0.0);
  const auto bad = finite_diff_check(sq, x, std::vector<double>{2.0, 5.0}, 1e-5);
  EXPECT_EQ(bad.worst_index, 1u);
  EXPECT_NEAR(bad.max_relative_error, 0.2, 1e-6);
}

TEST(FiniteDiffCheck, Errors) {
  const std::vector<double> x{1.0};
  auto nan_fn = [](std::span<const double>) { return std::nan(""); };
  EXPECT_THROW(finite_diff_check(nan_fn, x, x, 1e-5), NumericError);
  auto f = [](std::span<const double> p) { return p[0]; };
  EXPECT_THROW(finite_diff_check(f, x, x, 0.0), ConfigError);
  EXPECT_THROW(finite_diff_check(f, x, std::vector<double>{}, 1e-5), ShapeError);
}

TEST(Determinism, RepeatedPrimitiveCallsAreBitwiseEqual) {
  Rng rng(13);
  auto l = make_layer(3, 2, 3);
  l.kernels = random_tensor(l.kernels.dims(), rng);
  const auto x = random_tensor(Dims{2, 2, 6, 6}, rng);
  EXPECT_EQ(conv2d_forward(x, l), conv2d_forward(x, l));
  const auto go = random_tensor(Dims{2, 3, 6, 6}, rng);
  EXPECT_EQ(conv2d_backward(x, l, go).grad_kernels, conv2d_backward(x, l, go).grad_kernels);
  EXPECT_EQ(batchnorm_forward(x, BatchNormState::identity(2), Mode::train).output,
            batchnorm_forward(x, BatchNormState::identity(2), Mode::train).output);
}
