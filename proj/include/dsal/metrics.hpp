#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "dsal/core_types.hpp"
#include "dsal/error.hpp"

namespace dsal {

/// Per-pixel weight exp(-(1 - y) / w): 1 at y = 1, exp(-1/w) at y = 0.
inline double loss_weight(double target, double w) { return std::exp(-(1.0 - target) / w); }

/// Exponentially weighted absolute error, averaged over all pixels.
inline double weighted_mae(const FieldGrid& pred, const FieldGrid& target, double w, double alpha = 1.0) {
  require_same_shape(pred, target, "weighted_mae");
  if (!(w > 0.0)) throw ConfigError("weighted_mae: w must be positive");
  if (pred.size() == 0) throw ShapeError("weighted_mae: empty grid");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double err = std::abs(pred.values[i] - target.values[i]);
    sum += loss_weight(target.values[i], w) * (alpha == 1.0 ? err : std::pow(err, alpha));
  }
  return sum / static_cast<double>(pred.size());
}

/// Plain mean absolute error.
inline double mae(const FieldGrid& pred, const FieldGrid& target) {
  require_same_shape(pred, target, "mae");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred.values[i] - target.values[i]);
  return sum / static_cast<double>(pred.size());
}

/// Weighted MAE over the whole lattice plus plain MAE inside each region.
/// Regions without pixels are reported as absent.
struct MetricsReport {
  double wmae_all = 0.0;
  std::optional<double> mae_src, mae_field, mae_ring1, mae_ring2, mae_ring3;
  std::size_t n_all = 0, n_src = 0, n_field = 0, n_ring1 = 0, n_ring2 = 0, n_ring3 = 0;
};

/// Accumulates region sums over many samples. Dataset-level values are flat
/// means over every pixel (of every sample) in the region.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(double w) : w_(w) {
    if (!(w > 0.0)) throw ConfigError("MetricsAccumulator: w must be positive");
  }

  void add(const FieldGrid& pred, const FieldGrid& target, const RegionMasks& masks) {
    require_same_shape(pred, target, "region_mae");
    if (masks.height != pred.height || masks.width != pred.width || masks.src.size() != pred.size()) {
      throw ShapeError("region_mae: mask shape mismatch");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double err = std::abs(pred.values[i] - target.values[i]);
      all_.add(loss_weight(target.values[i], w_) * err);
      if (masks.src[i]) src_.add(err);
      if (masks.field[i]) field_.add(err);
      if (masks.ring1[i]) ring1_.add(err);
      if (masks.ring2[i]) ring2_.add(err);
      if (masks.ring3[i]) ring3_.add(err);
    }
  }

  MetricsReport report() const {
    MetricsReport r;
    r.wmae_all = all_.mean().value_or(0.0);
    r.mae_src = src_.mean();
    r.mae_field = field_.mean();
    r.mae_ring1 = ring1_.mean();
    r.mae_ring2 = ring2_.mean();
    r.mae_ring3 = ring3_.mean();
    r.n_all = all_.n;
    r.n_src = src_.n;
    r.n_field = field_.n;
    r.n_ring1 = ring1_.n;
    r.n_ring2 = ring2_.n;
    r.n_ring3 = ring3_.n;
    return r;
  }

 private:
  struct Sum {
    double s = 0.0;
    std::size_t n = 0;
    void add(double v) {
      s += v;
      ++n;
    }
    std::optional<double> mean() const {
      if (n == 0) return std::nullopt;
      return s / static_cast<double>(n);
    }
  };
  double w_;
  Sum all_, src_, field_, ring1_, ring2_, ring3_;
};

inline MetricsReport region_mae(const FieldGrid& pred, const FieldGrid& target, const RegionMasks& masks, double w) {
  MetricsAccumulator acc(w);
  acc.add(pred, target, masks);
  return acc.report();
}

/// Mean over pixels of the (divide-by-k) variance across k stochastic
/// predictions of the same sample.
inline double entropy_score(std::span<const FieldGrid> predictions) {
  const std::size_t k = predictions.size();
  if (k < 2) throw ConfigError("entropy_score: need at least two predictions");
  const std::size_t n = predictions.front().size();
  for (const auto& p : predictions) require_same_shape(p, predictions.front(), "entropy_score");
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    // shifted by the first pass, so identical passes give exactly 0
    const double ref = predictions.front().values[j];
    double mean = 0.0;
    for (const auto& p : predictions) mean += p.values[j] - ref;
    mean /= static_cast<double>(k);
    for (const auto& p : predictions) {
      const double d = p.values[j] - ref - mean;
      total += d * d;
    }
  }
  return total / (static_cast<double>(n) * static_cast<double>(k));
}

/// Euclidean norm of the pixelwise difference of two outputs.
inline double output_discrepancy(const FieldGrid& a, const FieldGrid& b) {
  require_same_shape(a, b, "output_discrepancy");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace dsal
