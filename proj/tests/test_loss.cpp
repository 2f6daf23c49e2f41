#include <gtest/gtest.h>

#include <cmath>

#include "despeckle/gradcheck.hpp"
#include "despeckle/loss.hpp"
#include "despeckle/speckle.hpp"
#include "test_util.hpp"

using namespace despeckle;
using despeckle::testing::random_image;

namespace {

// Independent evaluation of the two KL sums.
double sid_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    a += p[i] * std::log(p[i] / q[i]);
    b += q[i] * std::log(q[i] / p[i]);
  }
  return a + b;
}

ProbVector random_prob(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = 0.01 + rng.uniform();
  return normalize_to_prob(v);
}

Image2D from_span(std::span<const double> p, std::size_t rows, std::size_t cols) {
  return Image2D(rows, cols, std::vector<double>(p.begin(), p.end()));
}

}  // namespace

TEST(Mse, ValueAndGradient) {
  Rng rng(1);
  const auto x = random_image(4, 4, rng);
  const auto same = mse(x, x);
  EXPECT_EQ(same.value, 0.0);
  for (double g : same.grad.data()) EXPECT_EQ(g, 0.0);

  const auto two = mse(Image2D(1, 2, {1, 1}), Image2D(1, 2, {0, 2}));
  EXPECT_DOUBLE_EQ(two.value, 1.0);
  EXPECT_DOUBLE_EQ(two.grad[0], 1.0);
  EXPECT_DOUBLE_EQ(two.grad[1], -1.0);
  EXPECT_THROW(mse(x, Image2D(4, 5)), ShapeError);
}

TEST(Mse, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const auto xhat = random_image(8, 8, rng), x = random_image(8, 8, rng);
  auto f = [&](std::span<const double> p) { return mse(from_span(p, 8, 8), x).value; };
  EXPECT_LT(finite_diff_check(f, xhat.data(), mse(xhat, x).grad.data(), 1e-5).max_relative_error, 1e-6);
}

TEST(NormalizeToProb, Cases) {
  const auto u = normalize_to_prob(Image2D(3, 3, 0.7));
  for (double v : u.values) EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);

  const auto p = normalize_to_prob(std::vector<double>{1.0, 3.0}, 1e-15);
  EXPECT_NEAR(p.values[0], 0.25, 1e-14);
  EXPECT_NEAR(p.values[1], 0.75, 1e-14);

  const double eps = 1e-7;
  const auto c = normalize_to_prob(std::vector<double>{-1.0, 1.0}, eps);
  EXPECT_NEAR(c.values[0], eps / (1 + 2 * eps), 1e-20);
  EXPECT_NEAR(c.values[1], (1 + eps) / (1 + 2 * eps), 1e-15);

  EXPECT_THROW(normalize_to_prob(std::vector<double>{1.0, INFINITY}), NumericError);
  EXPECT_THROW(normalize_to_prob(std::vector<double>{1.0}, 0.0), ConfigError);
}

TEST(NormalizeToProb, StrictlyPositiveAndSumsToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = random_image(7, 9, rng, -1.0, 2.0);
    const auto p = normalize_to_prob(img);
    double s = 0.0;
    for (double v : p.values) {
      ASSERT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Sid, HandCase) {
  const ProbVector p{{0.5, 0.5}}, q{{0.25, 0.75}};
  const double expected = sid_oracle(p.values, q.values);
  EXPECT_NEAR(expected, 0.27465307216702745, 1e-15);  // 0.25 * ln 3
  EXPECT_NEAR(sid(p, q), expected, 1e-14);
}

TEST(Sid, IdentitySymmetryNonNegativity) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_prob(64, rng), q = random_prob(64, rng);
    EXPECT_LE(std::abs(sid(p, p)), 1e-10);
    EXPECT_NEAR(sid(p, q), sid(q, p), 1e-12);
    EXPECT_GE(sid(p, q), 0.0);
    EXPECT_NEAR(sid(p, q), sid_oracle(p.values, q.values), 1e-12);
  }
  EXPECT_THROW(sid(ProbVector{{1.0}}, ProbVector{{0.5, 0.5}}), ShapeError);
}

TEST(Sid, InvariantUnderJointRescaling) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_image(8, 8, rng, 0.1, 3.0), b = random_image(8, 8, rng, 0.1, 3.0);
    const double c = 0.1 + 10.0 * rng.uniform();
    Image2D ca = a, cb = b;
    for (double& v : ca.data()) v *= c;
    for (double& v : cb.data()) v *= c;
    // scale-free when the additive floor is negligible
    const double base = sid(normalize_to_prob(a, 1e-300), normalize_to_prob(b, 1e-300));
    EXPECT_NEAR(sid(normalize_to_prob(ca, 1e-300), normalize_to_prob(cb, 1e-300)), base, 1e-10);
  }
}

TEST(RatioEstimate, Cases) {
  Rng rng(6);
  const auto x = random_image(6, 6, rng, 0.1, 1.0);
  const auto n = sample_speckle(6, 6, Looks(2), rng);
  const auto y = corrupt(x, n);
  const auto r = ratio_estimate(y, x, 1e-300);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], n[i], 1e-14 * n[i]);

  const auto zero = ratio_estimate(Image2D(3, 3, 0.0), x.crop(0, 0, 3, 3));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(ratio_estimate(Image2D(1, 1, 2.0), Image2D(1, 1, 4.0), 0.0)[0], 0.5);
  // negative estimates are clamped to 0 before dividing
  EXPECT_EQ(ratio_estimate(Image2D(1, 1, 2.0), Image2D(1, 1, -4.0), 0.5)[0], 4.0);
  EXPECT_THROW(ratio_estimate(x, Image2D(2, 2)), ShapeError);
}

TEST(CompositeCost, PerfectEstimateAndLambdaZero) {
  Rng rng(7);
  const auto x = random_image(8, 8, rng, 0.1, 1.0);
  const auto n = sample_speckle(8, 8, Looks(1), rng);
  const auto y = corrupt(x, n);
  const auto perfect = composite_cost(y, x, x, n, 3.0, {1e-7, 1e-12});
  EXPECT_EQ(perfect.cost.c2_mse, 0.0);
  EXPECT_LT(perfect.cost.c1_sid, 1e-9);

  const auto xhat = random_image(8, 8, rng, 0.1, 1.0);
  const auto off = composite_cost(y, xhat, x, n, 0.0);
  const auto m = mse(xhat, x);
  EXPECT_EQ(off.cost.total, m.value);
  EXPECT_EQ(off.grad, m.grad);
  EXPECT_GT(off.cost.c1_sid, 0.0);  // still reported
}

TEST(CompositeCost, BreakdownIdentity) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_image(8, 8, rng, 0.05, 1.0);
    const auto n = sample_speckle(8, 8, Looks(1), rng);
    const auto xhat = random_image(8, 8, rng, -0.2, 1.0);
    const double lambda = 5.0 * rng.uniform();
    const auto c = composite_cost(corrupt(x, n), xhat, x, n, lambda).cost;
    EXPECT_NEAR(c.total, lambda * c.c1_sid + c.c2_mse, 1e-12);
    EXPECT_GE(c.c1_sid, 0.0);
    EXPECT_GE(c.c2_mse, 0.0);
    EXPECT_EQ(c.lambda, lambda);
  }
}

TEST(CompositeCost, GradientMatchesFiniteDifferencesOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const auto x = random_image(8, 8, rng, 0.05, 1.0);
    const auto n = sample_speckle(8, 8, Looks(1 + seed % 4), rng);
    const auto y = corrupt(x, n);
    const auto xhat = random_image(8, 8, rng, 0.05, 1.0);
    const double lambda = 0.5 + rng.uniform();
    auto f = [&](std::span<const double> p) {
      return composite_cost(y, from_span(p, 8, 8), x, n, lambda).cost.total;
    };
    const auto grad = composite_cost(y, xhat, x, n, lambda).grad;
    const auto r = finite_diff_check(f, xhat.data(), grad.data(), 1e-6);
    ASSERT_LT(r.max_relative_error, 1e-4) << "seed " << seed << " index " << r.worst_index;
  }
}

TEST(CompositeCost, Errors) {
  const Image2D a(4, 4, 1.0), b(4, 5, 1.0);
  EXPECT_THROW(composite_cost(a, a, a, b, 1.0), ShapeError);
  EXPECT_THROW(composite_cost(a, a, a, a, -1.0), ConfigError);
  EXPECT_THROW(composite_cost(a, a, a, a, 1.0, {1e-7, 0.0}), ConfigError);
}
