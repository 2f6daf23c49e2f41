#pragma once

// Mini-batch SGD with momentum over a patch dataset.
//
// Steps per epoch are ceil(count / batch_size). Epoch e visits the patches in
// the order of a Fisher-Yates shuffle drawn from Rng(derive_seed(seed, e)),
// so a run resumed at any step replays exactly the same batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "despeckle/loss.hpp"
#include "despeckle/network.hpp"
#include "despeckle/optimizer.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle {

enum class Objective {
  composite,  ///< lambda * SID + MSE
  mse_only,   ///< MSE gradient only; SID is still reported
};

struct TrainConfig {
  double lambda = 1.0;
  double eta = 2e-6;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  double looks = 1.0;
  std::uint64_t seed = 0;
  std::size_t val_every = 0;  ///< record every N steps; 0 = once per epoch
  std::size_t patience = 0;   ///< early stopping on val_total; 0 = off
  Objective objective = Objective::composite;
  LossEps eps{};

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    Looks{looks};
  }
};

struct HistoryRecord {
  std::size_t step = 0;
  double train_total = 0.0, train_c1 = 0.0, train_c2 = 0.0;
  double val_total = 0.0, val_c1 = 0.0, val_c2 = 0.0;
};

struct TrainHistory {
  std::vector<HistoryRecord> records;
};

/// One line per record: step train_total train_c1 train_c2 val_total val_c1 val_c2
inline std::string format_history(const TrainHistory& h) {
  std::ostringstream os;
  os.precision(12);
  os << "# step train_total train_c1 train_c2 val_total val_c1 val_c2\n";
  for (const auto& r : h.records)
    os << r.step << ' ' << r.train_total << ' ' << r.train_c1 << ' ' << r.train_c2 << ' ' << r.val_total
       << ' ' << r.val_c1 << ' ' << r.val_c2 << '\n';
  return os.str();
}

struct TrainState {
  NetworkParams params;
  OptimizerState opt;
  std::uint64_t step = 0;  ///< optimizer steps already taken
};

inline TrainState fresh_state(NetworkParams params) {
  TrainState s{std::move(params), {}, 0};
  s.opt = OptimizerState::zeros_like(parameter_views(s.params));
  return s;
}

struct TrainResult {
  TrainState state;
  TrainHistory history;
  bool stopped_early = false;
};

/// Raised when a batch cost is not finite. `state` holds the parameters
/// reached before the offending step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, TrainState state, TrainHistory history)
      : NumericError(what), state_(std::move(state)), history_(std::move(history)) {}
  const TrainState& state() const noexcept { return state_; }
  const TrainHistory& history() const noexcept { return history_; }

 private:
  TrainState state_;
  TrainHistory history_;
};

/// Stacks the noisy planes of `ds.patches[indices]` into a (B, 1, P, P) tensor.
inline Tensor4 stack_noisy(const PatchDataset& ds, std::span<const std::size_t> indices) {
  const std::size_t p = ds.patch_size;
  Tensor4 t(Dims{indices.size(), 1, p, p});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto src = ds.patches[indices[b]].noisy.data();
    std::copy(src.begin(), src.end(), t.plane(b, 0).begin());
  }
  return t;
}

inline Image2D plane_image(const Tensor4& t, std::size_t b) {
  auto src = t.plane(b, 0);
  return Image2D(t.dims().rows, t.dims().cols, std::vector<double>(src.begin(), src.end()));
}

struct BatchCost {
  CostBreakdown mean;
  Tensor4 grad;  ///< d(mean cost) / d(output)
};

inline BatchCost batch_cost(const PatchDataset& ds, std::span<const std::size_t> indices,
                            const Tensor4& output, const TrainConfig& cfg) {
  const double inv_b = 1.0 / static_cast<double>(indices.size());
  BatchCost bc{{0.0, 0.0, 0.0, cfg.lambda}, Tensor4(output.dims())};
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Patch& p = ds.patches[indices[b]];
    const Image2D xhat = plane_image(output, b);
    auto c = composite_cost(p.noisy, xhat, p.clean, p.speckle, cfg.lambda, cfg.eps);
    const Image2D& grad = cfg.objective == Objective::mse_only ? mse(xhat, p.clean).grad : c.grad;
    bc.mean.total += c.cost.total;
    bc.mean.c1_sid += c.cost.c1_sid;
    bc.mean.c2_mse += c.cost.c2_mse;
    auto dst = bc.grad.plane(b, 0);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = grad[i] * inv_b;
  }
  bc.mean.total *= inv_b;
  bc.mean.c1_sid *= inv_b;
  bc.mean.c2_mse *= inv_b;
  return bc;
}

/// Mean composite cost over a dataset in infer mode.
inline CostBreakdown evaluate(const NetworkParams& net, const PatchDataset& ds, double lambda,
                              LossEps eps = {}, std::size_t chunk = 32) {
  CostBreakdown sum{0.0, 0.0, 0.0, lambda};
  if (ds.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan, lambda};
  }
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) idx.push_back(i);
    const Tensor4 out = forward(net, stack_noisy(ds, idx), Mode::infer);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Patch& p = ds.patches[idx[b]];
      const auto c = composite_cost(p.noisy, plane_image(out, b), p.clean, p.speckle, lambda, eps).cost;
      sum.total += c.total;
      sum.c1_sid += c.c1_sid;
      sum.c2_mse += c.c2_mse;
    }
  }
  const double n = static_cast<double>(ds.size());
  sum.total /= n;
  sum.c1_sid /= n;
  sum.c2_mse /= n;
  return sum;
}

/// Mean of every clean pixel in the dataset (0 for an empty set).
inline double mean_clean_intensity(const PatchDataset& ds) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : ds.patches) {
    for (double v : p.clean.data()) sum += v;
    n += p.clean.size();
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch));
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

inline std::size_t steps_per_epoch(std::size_t count, std::size_t batch) {
  return (count + batch - 1) / batch;
}

/// Runs until epochs * steps_per_epoch optimizer steps have been taken in
/// total (counting those already in `init.step`).
inline TrainResult train(TrainState init, const PatchDataset& data, const PatchDataset& val,
                         const TrainConfig& cfg) {
  cfg.validate();
  validate_params(init.params);
  if (data.empty()) throw ConfigError("train: training dataset is empty");
  for (const auto& p : data.patches)
    if (p.noisy.rows() != data.patch_size || p.noisy.cols() != data.patch_size)
      throw ShapeError("train: patches differ in size");

  TrainResult result{std::move(init), {}, false};
  TrainState& st = result.state;
  if (st.opt.velocity.empty()) st.opt = OptimizerState::zeros_like(parameter_views(st.params));

  const std::size_t per_epoch = steps_per_epoch(data.size(), cfg.batch_size);
  const std::uint64_t total_steps = static_cast<std::uint64_t>(cfg.epochs) * per_epoch;
  const std::size_t record_every = cfg.val_every ? cfg.val_every : per_epoch;

  auto batch_indices = [&](std::uint64_t step, const std::vector<std::size_t>& order) {
    const std::size_t k = static_cast<std::size_t>(step % per_epoch);
    const std::size_t begin = k * cfg.batch_size;
    const std::size_t end = std::min(data.size(), begin + cfg.batch_size);
    return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
  };

  CostBreakdown train_acc{0.0, 0.0, 0.0, cfg.lambda};
  std::size_t train_n = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  auto record = [&](std::uint64_t step) {
    HistoryRecord r;
    r.step = static_cast<std::size_t>(step);
    if (train_n > 0) {
      r.train_total = train_acc.total / static_cast<double>(train_n);
      r.train_c1 = train_acc.c1_sid / static_cast<double>(train_n);
      r.train_c2 = train_acc.c2_mse / static_cast<double>(train_n);
    } else {
      // Nothing trained yet: cost of the upcoming batch under batch statistics.
      const auto order = epoch_order(data.size(), cfg.seed, step / per_epoch);
      const auto idx = batch_indices(step, order);
      const auto c = batch_cost(data, idx, forward(st.params, stack_noisy(data, idx), Mode::train), cfg).mean;
      r.train_total = c.total;
      r.train_c1 = c.c1_sid;
      r.train_c2 = c.c2_mse;
    }
    const auto v = evaluate(st.params, val, cfg.lambda, cfg.eps);
    r.val_total = v.total;
    r.val_c1 = v.c1_sid;
    r.val_c2 = v.c2_mse;
    result.history.records.push_back(r);
    train_acc = {0.0, 0.0, 0.0, cfg.lambda};
    train_n = 0;
    if (std::isfinite(v.total)) {
      if (v.total < best_val) {
        best_val = v.total;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
  };

  if (st.step >= total_steps) return result;
  record(st.step);

  std::vector<std::size_t> order;
  std::uint64_t order_epoch = std::numeric_limits<std::uint64_t>::max();
  while (st.step < total_steps) {
    const std::uint64_t epoch = st.step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(data.size(), cfg.seed, epoch);
      order_epoch = epoch;
    }
    const auto idx = batch_indices(st.step, order);
    const ForwardPass pass = forward_train(st.params, stack_noisy(data, idx));
    const BatchCost bc = batch_cost(data, idx, pass.output, cfg);
    auto abort = [&](const char* what) {
      std::ostringstream msg;
      msg << "non-finite training " << what << " at step " << st.step << "; kernel norms:";
      for (double n : layer_norms(st.params)) msg << ' ' << n;
      throw TrainingAborted(msg.str(), st, result.history);
    };
    if (!std::isfinite(bc.mean.total)) abort("cost");
    auto grads = backward(st.params, pass, bc.grad);
    // ReLU maps NaN to 0, so a poisoned layer can leave the cost finite
    for (const auto& g : grads)
      for (double v : g)
        if (!std::isfinite(v)) abort("gradient");
    sgd_momentum_step(parameter_views(st.params), grads, st.opt, cfg.eta, cfg.momentum);
    for (std::size_t i = 0; i < st.params.layers.size(); ++i)
      if (pass.bn_states[i]) {
        // keep the (just updated) affine parameters, take the new running statistics
        st.params.layers[i].bn->running_mean = pass.bn_states[i]->running_mean;
        st.params.layers[i].bn->running_var = pass.bn_states[i]->running_var;
      }
    ++st.step;
    train_acc.total += bc.mean.total;
    train_acc.c1_sid += bc.mean.c1_sid;
    train_acc.c2_mse += bc.mean.c2_mse;
    ++train_n;

    if (st.step % record_every == 0 || st.step == total_steps) {
      record(st.step);
      if (cfg.patience > 0 && since_best >= cfg.patience) {
        result.stopped_early = st.step < total_steps;
        break;
      }
    }
  }
  return result;
}

/// Convenience overload starting from freshly initialized parameters.
inline TrainResult train(const NetworkParams& params, const PatchDataset& data, const PatchDataset& val,
                         const TrainConfig& cfg) {
  return train(fresh_state(params), data, val, cfg);
}

}  // namespace despeckle
