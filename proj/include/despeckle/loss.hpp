#pragma once

// Composite despeckling cost
//
//   C = lambda * C1 + C2
//   C1 = SID(norm(Y / (max(Xhat, 0) + div_eps)), norm(N))
//   C2 = mean((Xhat - X)^2)
//
// SID is the symmetric Kullback-Leibler sum between two probability vectors.
// For a single-band patch the "spectrum" is the patch itself: every pixel of
// a ratio image is clamped at 0, floored by floor_eps and the patch is divided
// by its total, giving a distribution over pixel positions.
//
// Gradients are analytic and exact (including the clamps, whose subgradient at
// the kink is taken as 0).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "despeckle/errors.hpp"
#include "despeckle/image.hpp"

namespace despeckle {

inline constexpr double kDefaultFloorEps = 1e-7;
inline constexpr double kDefaultDivEps = 1e-6;

struct LossEps {
  double floor_eps = kDefaultFloorEps;
  double div_eps = kDefaultDivEps;
};

struct CostBreakdown {
  double total = 0.0;
  double c1_sid = 0.0;
  double c2_mse = 0.0;
  double lambda = 1.0;
};

struct ValueAndGrad {
  double value = 0.0;
  Image2D grad;
};

inline ValueAndGrad mse(const Image2D& xhat, const Image2D& x) {
  require_same_shape(xhat, x, "mse");
  const double n = static_cast<double>(x.size());
  ValueAndGrad out{0.0, Image2D(x.rows(), x.cols())};
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = xhat[i] - x[i];
    sum += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.value = sum / n;
  return out;
}

/// Strictly positive entries summing to 1.
struct ProbVector {
  std::vector<double> values;
};

inline ProbVector normalize_to_prob(std::span<const double> patch, double floor_eps = kDefaultFloorEps) {
  if (!(floor_eps > 0.0)) throw ConfigError("normalize_to_prob: floor_eps must be > 0");
  ProbVector p{std::vector<double>(patch.size())};
  double total = 0.0;
  for (std::size_t i = 0; i < patch.size(); ++i) {
    if (!std::isfinite(patch[i])) throw NumericError("normalize_to_prob: non-finite input");
    p.values[i] = (patch[i] > 0.0 ? patch[i] : 0.0) + floor_eps;
    total += p.values[i];
  }
  for (double& v : p.values) v /= total;
  return p;
}

inline ProbVector normalize_to_prob(const Image2D& patch, double floor_eps = kDefaultFloorEps) {
  return normalize_to_prob(patch.data(), floor_eps);
}

/// Symmetric KL sum, natural log: sum (p - q) * (log p - log q).
inline double sid(const ProbVector& p, const ProbVector& q) {
  if (p.values.size() != q.values.size())
    throw ShapeError("sid: lengths " + std::to_string(p.values.size()) + " and " +
                     std::to_string(q.values.size()) + " differ");
  double kl_pq = 0.0, kl_qp = 0.0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double lp = std::log(p.values[i]), lq = std::log(q.values[i]);
    kl_pq += p.values[i] * (lp - lq);
    kl_qp += q.values[i] * (lq - lp);
  }
  return kl_pq + kl_qp;
}

inline Image2D ratio_estimate(const Image2D& y, const Image2D& xhat, double div_eps = kDefaultDivEps) {
  require_same_shape(y, xhat, "ratio_estimate");
  if (!(div_eps >= 0.0)) throw ConfigError("ratio_estimate: div_eps must be >= 0");
  Image2D out(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i)
    out[i] = y[i] / ((xhat[i] > 0.0 ? xhat[i] : 0.0) + div_eps);
  return out;
}

struct SidValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;  ///< d value / d a
};

/// SID(normalize_to_prob(a, floor_eps), q) and its gradient with respect to
/// the raw patch `a`. Entries with a_i <= 0 sit on the clamp and get 0.
inline SidValueAndGrad sid_to_patch(std::span<const double> a, const ProbVector& q,
                                    double floor_eps = kDefaultFloorEps) {
  const ProbVector p = normalize_to_prob(a, floor_eps);
  SidValueAndGrad out{sid(p, q), std::vector<double>(a.size(), 0.0)};
  // dSID/dp_i = log p_i - log q_i + 1 - q_i / p_i
  // p = b / S with b_i = max(a_i, 0) + floor  =>  dSID/db_j = (g_j - sum_i g_i p_i) / S
  double total = 0.0;
  for (double v : a) total += (v > 0.0 ? v : 0.0) + floor_eps;
  std::vector<double> g(a.size());
  double g_dot_p = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    g[i] = std::log(p.values[i]) - std::log(q.values[i]) + 1.0 - q.values[i] / p.values[i];
    g_dot_p += g[i] * p.values[i];
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > 0.0) out.grad[i] = (g[i] - g_dot_p) / total;
  return out;
}

struct CompositeCost {
  CostBreakdown cost;
  Image2D grad;  ///< dC / dXhat
};

/// `y` noisy, `xhat` estimate, `x` clean reference, `n` true speckle.
inline CompositeCost composite_cost(const Image2D& y, const Image2D& xhat, const Image2D& x,
                                    const Image2D& n, double lambda, LossEps eps = {}) {
  require_same_shape(y, xhat, "composite_cost");
  require_same_shape(x, xhat, "composite_cost");
  require_same_shape(n, xhat, "composite_cost");
  if (!(lambda >= 0.0)) throw ConfigError("composite_cost: lambda must be >= 0");
  if (!(eps.div_eps > 0.0)) throw ConfigError("composite_cost: div_eps must be > 0");

  auto c2 = mse(xhat, x);
  CompositeCost out{{0.0, 0.0, c2.value, lambda}, std::move(c2.grad)};

  const Image2D ratio = ratio_estimate(y, xhat, eps.div_eps);
  const ProbVector q = normalize_to_prob(n, eps.floor_eps);
  const auto c1 = sid_to_patch(ratio.data(), q, eps.floor_eps);
  out.cost.c1_sid = c1.value;
  out.cost.total = lambda * out.cost.c1_sid + out.cost.c2_mse;
  if (lambda == 0.0) return out;

  for (std::size_t i = 0; i < ratio.size(); ++i) {
    if (!(xhat[i] > 0.0)) continue;  // clamped estimate: ratio does not depend on xhat here
    const double denom = xhat[i] + eps.div_eps;
    out.grad[i] += lambda * c1.grad[i] * (-y[i] / (denom * denom));
  }
  return out;
}

}  // namespace despeckle
