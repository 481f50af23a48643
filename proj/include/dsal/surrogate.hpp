#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsal/core_types.hpp"
#include "dsal/error.hpp"
#include "dsal/metrics.hpp"
#include "dsal/nn/model.hpp"
#include "dsal/nn/optim.hpp"
#include "dsal/rng.hpp"

namespace dsal {

using nn::Arch;
using nn::ModelSpec;
using nn::ModelState;

/// Single-precision surrogate used for training and scoring.
using Surrogate = nn::Model<float>;

struct TrainConfig {
  int epochs = 500;
  int batch_size = 16;
  nn::OptimizerConfig optimizer;
  double loss_w = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("TrainConfig: learning rate must be non-negative");
    if (!(loss_w > 0.0)) throw ConfigError("TrainConfig: loss_w must be positive");
  }
  bool operator==(const TrainConfig&) const = default;
};

/// One (input, target) pair referenced from a dataset.
struct SampleRef {
  const FieldGrid* input = nullptr;
  const FieldGrid* target = nullptr;
};

/// Parameters one optimizer step apart, for temporal output discrepancy.
template <class T>
struct Snapshots {
  ModelSpec spec;
  ModelState<T> theta_t;
  ModelState<T> theta_t_plus_T;
  int T_steps = 1;
};
using ModelSnapshots = Snapshots<float>;

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_s = 0.0;
};

template <class T>
nn::Tensor<T> to_tensor(std::span<const FieldGrid* const> grids) {
  if (grids.empty()) throw ShapeError("to_tensor: empty batch");
  const int h = grids.front()->height, w = grids.front()->width;
  nn::Tensor<T> t(1, static_cast<int>(grids.size()), h, w);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (grids[i]->height != h || grids[i]->width != w) throw ShapeError("to_tensor: mixed grid shapes in batch");
    T* dst = t.plane_ptr(0, static_cast<int>(i));
    for (std::size_t p = 0; p < grids[i]->size(); ++p) dst[p] = static_cast<T>(grids[i]->values[p]);
  }
  return t;
}

template <class T>
std::vector<FieldGrid> to_grids(const nn::Tensor<T>& t) {
  if (t.c != 1) throw ShapeError("to_grids: expected a single-channel tensor");
  std::vector<FieldGrid> out;
  out.reserve(static_cast<std::size_t>(t.n));
  for (int i = 0; i < t.n; ++i) {
    FieldGrid g(t.h, t.w);
    const T* src = t.plane_ptr(0, i);
    for (std::size_t p = 0; p < g.size(); ++p) g.values[p] = static_cast<double>(src[p]);
    out.push_back(std::move(g));
  }
  return out;
}

/// Weighted-MAE loss of a batch (flat mean over all pixels) and its gradient
/// with respect to the prediction; sign(0) is taken as 0.
template <class T>
double weighted_mae_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& target, double w, nn::Tensor<T>* grad) {
  if (!pred.same_shape(target)) throw ShapeError("weighted_mae_loss: shape mismatch");
  const double inv_m = 1.0 / static_cast<double>(pred.size());
  if (grad) *grad = nn::Tensor<T>(pred.c, pred.n, pred.h, pred.w);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = static_cast<double>(target.v[i]);
    const double diff = static_cast<double>(pred.v[i]) - y;
    const double weight = loss_weight(y, w);
    sum += weight * std::abs(diff);
    if (grad) grad->v[i] = static_cast<T>(diff > 0.0 ? weight * inv_m : diff < 0.0 ? -weight * inv_m : 0.0);
  }
  return sum * inv_m;
}

/// Eval-mode prediction, one sample per forward pass, so a sample's output
/// does not depend on what it is batched with.
template <class T>
std::vector<FieldGrid> predict(nn::Model<T>& model, std::span<const FieldGrid* const> inputs) {
  std::vector<FieldGrid> out;
  out.reserve(inputs.size());
  const nn::ForwardContext ctx{nn::Mode::eval, nullptr};
  for (const FieldGrid* g : inputs) {
    auto y = to_grids(model.forward(to_tensor<T>(std::span<const FieldGrid* const>(&g, 1)), ctx));
    out.push_back(std::move(y.front()));
  }
  return out;
}

template <class T>
FieldGrid predict_one(nn::Model<T>& model, const FieldGrid& input) {
  const FieldGrid* p = &input;
  return std::move(predict(model, std::span<const FieldGrid* const>(&p, 1)).front());
}

/// k stochastic passes with dropout active and batch norm in eval mode.
template <class T>
std::vector<FieldGrid> mc_dropout_forward(nn::Model<T>& model, const FieldGrid& input, int k, Rng& rng) {
  if (model.spec().dropout_rate <= 0.0) throw ConfigError("mc_dropout_forward: model was built without dropout");
  if (k < 1) throw ConfigError("mc_dropout_forward: k must be >= 1");
  std::vector<const FieldGrid*> batch(static_cast<std::size_t>(k), &input);
  const nn::ForwardContext ctx{nn::Mode::mc_dropout, &rng};
  return to_grids(model.forward(to_tensor<T>(batch), ctx));
}

/// Weighted MAE of the model over a sample set (flat mean over all pixels).
template <class T>
double evaluate_loss(nn::Model<T>& model, std::span<const SampleRef> samples, double w) {
  if (samples.empty()) throw ConfigError("evaluate_loss: empty sample set");
  double sum = 0.0;
  std::size_t pixels = 0;
  for (const auto& s : samples) {
    const auto pred = predict_one(model, *s.input);
    sum += weighted_mae(pred, *s.target, w) * static_cast<double>(pred.size());
    pixels += pred.size();
  }
  return sum / static_cast<double>(pixels);
}

/// One optimizer step on a batch: train-mode forward, loss, backward, update.
/// Returns the batch loss.
template <class T>
double apply_step(nn::Model<T>& model, nn::Optimizer<T>& opt, std::span<const SampleRef> batch, double w, Rng& dropout_rng) {
  std::vector<const FieldGrid*> xs, ys;
  for (const auto& s : batch) {
    xs.push_back(s.input);
    ys.push_back(s.target);
  }
  const auto x = to_tensor<T>(xs);
  const auto y = to_tensor<T>(ys);
  const nn::ForwardContext ctx{nn::Mode::train, &dropout_rng};
  const auto pred = model.forward(x, ctx);
  nn::Tensor<T> grad;
  const double loss = weighted_mae_loss(pred, y, w, &grad);
  model.zero_grad();
  model.backward(grad);
  opt.step(model.store().values, model.store().grads);
  return loss;
}

/// Everything needed to replay the final optimizer step of a round.
template <class T>
struct FinalStep {
  nn::Optimizer<T> optimizer;
  std::vector<std::size_t> batch;  ///< positions into the labeled set
  Rng dropout_rng;
};

template <class T>
struct TrainResult {
  nn::Model<T> best;  ///< best-validation checkpoint
  Snapshots<T> snapshots;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<FinalStep<T>> final_step;
};

/// Trains a freshly initialized model (or `warm_start` when given) on the
/// labeled samples; mini-batch order per epoch is drawn from
/// derive_seed(cfg.seed, {epoch}).
template <class T = float>
TrainResult<T> train_round(const ModelSpec& spec, std::uint64_t init_seed, std::span<const SampleRef> labeled,
                           std::span<const SampleRef> val, const TrainConfig& cfg,
                           const ModelState<T>* warm_start = nullptr) {
  cfg.validate();
  if (labeled.empty()) throw ConfigError("train_round: labeled set is empty");
  nn::Model<T> model(spec, init_seed);
  if (warm_start) model.load_state(*warm_start);
  nn::Optimizer<T> opt(cfg.optimizer, model.parameter_count());
  Rng dropout_rng(derive_seed(cfg.seed, {0x44524f50ULL}));

  std::optional<nn::Model<T>> best;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<EpochLog> log;
  ModelState<T> theta_t;
  std::optional<FinalStep<T>> final_step;

  std::vector<std::size_t> order(labeled.size());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<SampleRef> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(labeled[order[i]]);
      const bool last = epoch == cfg.epochs && end == order.size();
      if (last) {
        theta_t = model.state();
        final_step = FinalStep<T>{opt, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                                order.begin() + static_cast<std::ptrdiff_t>(end)),
                                  dropout_rng};
      }
      const double loss = apply_step(model, opt, std::span<const SampleRef>(batch), cfg.loss_w, dropout_rng);
      if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch), epoch);
      loss_sum += loss * static_cast<double>(end - start);
    }
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    if (!val.empty()) {
      row.val_loss = evaluate_loss(model, val, cfg.loss_w);
      if (!std::isfinite(row.val_loss)) throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch), epoch);
      if (row.val_loss < best_val) {
        best_val = row.val_loss;
        best_epoch = epoch;
        best = model;
      }
    }
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(row);
  }
  if (!best) {
    best = model;
    best_epoch = cfg.epochs;
    best_val = std::numeric_limits<double>::quiet_NaN();
  }
  Snapshots<T> snaps{spec, std::move(theta_t), model.state(), 1};
  return TrainResult<T>{std::move(*best), std::move(snaps), std::move(log), best_epoch, best_val, std::move(final_step)};
}

/// Output of the model with the given state on one input, eval mode.
template <class T>
FieldGrid predict_with_state(const ModelSpec& spec, const ModelState<T>& state, const FieldGrid& input) {
  nn::Model<T> m(spec, 0);
  m.load_state(state);
  return predict_one(m, input);
}

/// Temporal output discrepancy of one input: || f(x; theta_{t+T}) - f(x; theta_t) ||_2.
template <class T>
double tod_score(const Snapshots<T>& snaps, const FieldGrid& input) {
  if (snaps.theta_t.params.size() != snaps.theta_t_plus_T.params.size() ||
      snaps.theta_t.buffers.size() != snaps.theta_t_plus_T.buffers.size()) {
    throw ConfigError("tod_score: snapshots do not share a layout");
  }
  return output_discrepancy(predict_with_state(snaps.spec, snaps.theta_t_plus_T, input),
                            predict_with_state(snaps.spec, snaps.theta_t, input));
}

}  // namespace dsal
