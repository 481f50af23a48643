#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dsal/core_types.hpp"
#include "dsal/error.hpp"
#include "dsal/io.hpp"
#include "dsal/metrics.hpp"
#include "dsal/rng.hpp"
#include "dsal/surrogate.hpp"

namespace dsal {

enum class Strategy { random, entropy, tod, true_loss, diversity };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::entropy: return "entropy";
    case Strategy::tod: return "tod";
    case Strategy::true_loss: return "trueloss";
    case Strategy::diversity: return "diversity";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "random") return Strategy::random;
  if (s == "entropy") return Strategy::entropy;
  if (s == "tod") return Strategy::tod;
  if (s == "trueloss" || s == "true-loss" || s == "true_loss") return Strategy::true_loss;
  if (s == "diversity") return Strategy::diversity;
  throw ConfigError("unknown acquisition strategy '" + s + "' (expected random, entropy, tod, trueloss or diversity)");
}

/// Entropy needs MC dropout, which only the CNN autoencoder defines.
inline void require_supported(Arch arch, Strategy s) {
  if (s == Strategy::entropy && arch == Arch::unet) {
    throw ConfigError("entropy acquisition is not supported for the U-Net (MC dropout is only defined for the CNN autoencoder)");
  }
}

struct AcquisitionRequest {
  Strategy strategy = Strategy::random;
  std::size_t batch_size = 1;
  int k = 16;  ///< MC passes, entropy only
  std::uint64_t seed = 0;

  void validate(std::size_t pool_size) const {
    if (batch_size < 1) throw ConfigError("acquisition batch size must be >= 1");
    if (batch_size > pool_size) {
      throw ConfigError("acquisition batch size " + std::to_string(batch_size) + " exceeds pool size " + std::to_string(pool_size));
    }
    if (strategy == Strategy::entropy && k < 2) throw ConfigError("entropy acquisition needs k >= 2");
  }
};

/// Selected pool ids in pick order, plus one score per pool entry (aligned
/// with the pool passed in). `reference_only` marks the true-loss oracle,
/// which peeks at labels and is not a usable acquisition rule.
struct AcquisitionResult {
  Strategy strategy = Strategy::random;
  std::vector<std::size_t> selected;
  std::optional<std::vector<double>> scores;
  bool reference_only = false;
};

namespace detail {

inline void check_pool(std::span<const std::size_t> pool, std::size_t b) {
  if (b < 1) throw ConfigError("acquisition batch size must be >= 1");
  if (b > pool.size()) {
    throw ConfigError("acquisition batch size " + std::to_string(b) + " exceeds pool size " + std::to_string(pool.size()));
  }
}

template <class Seq>
void check_aligned(std::span<const std::size_t> pool, const Seq& data, const char* what) {
  if (data.size() != pool.size()) throw ShapeError(std::string(what) + ": per-pool data is not aligned with the pool ids");
}

/// Runs `score(i, worker)` for every pool position, splitting positions
/// into contiguous blocks. Each worker gets its own state from `make`.
template <class Make, class Score>
std::vector<double> score_all(std::size_t n, unsigned threads, Make make, Score score) {
  std::vector<double> out(n, 0.0);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  auto run = [&](std::size_t lo, std::size_t hi) {
    auto worker = make();
    for (std::size_t i = lo; i < hi; ++i) out[i] = score(i, worker);
  };
  if (threads == 1) {
    run(0, n);
    return out;
  }
  std::vector<std::jthread> pool;
  const std::size_t per = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = std::min(n, t * per), hi = std::min(n, lo + per);
    if (lo < hi) pool.emplace_back(run, lo, hi);
  }
  pool.clear();
  return out;
}

}  // namespace detail

/// Top-B ids by descending score; equal scores go to the lower pool id.
inline std::vector<std::size_t> select_top(std::span<const std::size_t> pool, std::span<const double> scores, std::size_t b) {
  detail::check_pool(pool, b);
  if (scores.size() != pool.size()) throw ShapeError("select_top: scores not aligned with pool");
  for (double s : scores)
    if (std::isnan(s)) throw Error("select_top: NaN acquisition score");
  std::vector<std::size_t> pos(pool.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(b), pos.end(), [&](std::size_t a, std::size_t c) {
    if (scores[a] != scores[c]) return scores[a] > scores[c];
    return pool[a] < pool[c];
  });
  std::vector<std::size_t> out;
  out.reserve(b);
  for (std::size_t i = 0; i < b; ++i) out.push_back(pool[pos[i]]);
  return out;
}

/// Uniform sample of B ids without replacement.
inline AcquisitionResult acquire_random(std::span<const std::size_t> pool, std::size_t b, Rng& rng) {
  detail::check_pool(pool, b);
  std::vector<std::size_t> ids(pool.begin(), pool.end());
  // partial Fisher-Yates: the first b slots end up a uniform sample
  for (std::size_t i = 0; i < b; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(b);
  return {Strategy::random, std::move(ids), std::nullopt, false};
}

/// MC-dropout variance score. Sample `pool[i]` draws its dropout masks from
/// derive_seed(seed, {pool[i]}), so a score does not depend on pool order.
inline AcquisitionResult acquire_entropy(const Surrogate& model, std::span<const std::size_t> pool,
                                         std::span<const FieldGrid* const> inputs, std::size_t b, int k,
                                         std::uint64_t seed, unsigned threads = 1) {
  detail::check_pool(pool, b);
  detail::check_aligned(pool, inputs, "acquire_entropy");
  if (k < 2) throw ConfigError("entropy acquisition needs k >= 2");
  if (model.spec().dropout_rate <= 0.0) throw ConfigError("acquire_entropy: model was built without dropout");
  auto scores = detail::score_all(
      pool.size(), threads, [&] { return model; },
      [&](std::size_t i, Surrogate& m) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(pool[i])}));
        const auto passes = mc_dropout_forward(m, *inputs[i], k, rng);
        return entropy_score(passes);
      });
  auto sel = select_top(pool, scores, b);
  return {Strategy::entropy, std::move(sel), std::move(scores), false};
}

/// Temporal output discrepancy between the two snapshots of the last step.
inline AcquisitionResult acquire_tod(const ModelSnapshots& snaps, std::span<const std::size_t> pool,
                                     std::span<const FieldGrid* const> inputs, std::size_t b, unsigned threads = 1) {
  detail::check_pool(pool, b);
  detail::check_aligned(pool, inputs, "acquire_tod");
  Surrogate before(snaps.spec, 0), after(snaps.spec, 0);
  try {
    before.load_state(snaps.theta_t);
    after.load_state(snaps.theta_t_plus_T);
  } catch (const ShapeError&) {
    throw ConfigError("acquire_tod: snapshots do not match their spec");
  }
  struct Pair {
    Surrogate a, b;
  };
  auto scores = detail::score_all(
      pool.size(), threads, [&] { return Pair{after, before}; },
      [&](std::size_t i, Pair& p) { return output_discrepancy(predict_one(p.a, *inputs[i]), predict_one(p.b, *inputs[i])); });
  auto sel = select_top(pool, scores, b);
  return {Strategy::tod, std::move(sel), std::move(scores), false};
}

/// Per-sample weighted MAE against the true target. Reference oracle only.
inline AcquisitionResult acquire_true_loss(const Surrogate& model, std::span<const std::size_t> pool,
                                           std::span<const FieldGrid* const> inputs,
                                           std::span<const FieldGrid* const> targets, std::size_t b, double w,
                                           unsigned threads = 1) {
  detail::check_pool(pool, b);
  detail::check_aligned(pool, inputs, "acquire_true_loss");
  if (targets.size() != pool.size()) throw ConfigError("acquire_true_loss: targets are missing for part of the pool");
  for (const FieldGrid* t : targets)
    if (t == nullptr) throw ConfigError("acquire_true_loss: missing target");
  auto scores = detail::score_all(
      pool.size(), threads, [&] { return model; },
      [&](std::size_t i, Surrogate& m) { return weighted_mae(predict_one(m, *inputs[i]), *targets[i], w); });
  auto sel = select_top(pool, scores, b);
  return {Strategy::true_loss, std::move(sel), std::move(scores), true};
}

/// Per-feature [lo, hi] used to map identifiers onto [0,1].
struct FeatureBounds {
  std::vector<double> lo, hi;

  std::vector<double> normalize(const std::vector<double>& v) const {
    if (v.size() != lo.size()) throw ShapeError("FeatureBounds: identifier length mismatch");
    std::vector<double> out(v.size());
    for (std::size_t f = 0; f < v.size(); ++f) {
      const double span = hi[f] - lo[f];
      out[f] = span > 0.0 ? (v[f] - lo[f]) / span : 0.0;
    }
    return out;
  }
};

inline FeatureBounds feature_bounds(std::span<const std::vector<double>> ids) {
  if (ids.empty()) throw ConfigError("feature_bounds: no identifiers");
  FeatureBounds b{ids.front(), ids.front()};
  for (const auto& v : ids) {
    if (v.size() != b.lo.size()) throw ShapeError("feature_bounds: identifier length mismatch");
    for (std::size_t f = 0; f < v.size(); ++f) {
      b.lo[f] = std::min(b.lo[f], v[f]);
      b.hi[f] = std::max(b.hi[f], v[f]);
    }
  }
  return b;
}

inline FeatureBounds feature_bounds(std::span<const ScenarioParams> params) {
  std::vector<std::vector<double>> ids;
  ids.reserve(params.size());
  for (const auto& p : params) ids.push_back(identifier(p));
  return feature_bounds(std::span<const std::vector<double>>(ids));
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Greedy k-center over already-normalized feature vectors. Each pick takes
/// the pool point farthest from everything covered so far (labeled plus
/// earlier picks). Scores: distance at pick time for picked points, final
/// covering distance for the rest.
inline AcquisitionResult k_center_greedy(std::span<const std::vector<double>> labeled, std::span<const std::size_t> pool,
                                         std::span<const std::vector<double>> features, std::size_t b) {
  detail::check_pool(pool, b);
  detail::check_aligned(pool, features, "acquire_diversity");
  if (labeled.empty()) throw ConfigError("acquire_diversity: labeled set is empty");
  std::vector<double> dmin(pool.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (const auto& l : labeled) dmin[i] = std::min(dmin[i], euclidean(features[i], l));
  std::vector<char> taken(pool.size(), 0);
  std::vector<double> scores(pool.size(), 0.0);
  std::vector<std::size_t> sel;
  sel.reserve(b);
  for (std::size_t step = 0; step < b; ++step) {
    std::size_t best = pool.size();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (taken[i]) continue;
      if (best == pool.size() || dmin[i] > dmin[best] || (dmin[i] == dmin[best] && pool[i] < pool[best])) best = i;
    }
    taken[best] = 1;
    scores[best] = dmin[best];
    sel.push_back(pool[best]);
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (!taken[i]) dmin[i] = std::min(dmin[i], euclidean(features[i], features[best]));
  }
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!taken[i]) scores[i] = dmin[i];
  return {Strategy::diversity, std::move(sel), std::move(scores), false};
}

/// Diversity acquisition on scenario identifiers (cx1, cy1, cx2, cy2, d, q2)
/// normalized with `bounds` (taken from the whole dataset).
inline AcquisitionResult acquire_diversity(std::span<const ScenarioParams> labeled, std::span<const std::size_t> pool,
                                           std::span<const ScenarioParams> pool_params, std::size_t b,
                                           const FeatureBounds& bounds) {
  detail::check_aligned(pool, pool_params, "acquire_diversity");
  std::vector<std::vector<double>> lf, pf;
  lf.reserve(labeled.size());
  pf.reserve(pool_params.size());
  for (const auto& p : labeled) lf.push_back(bounds.normalize(identifier(p)));
  for (const auto& p : pool_params) pf.push_back(bounds.normalize(identifier(p)));
  return k_center_greedy(lf, pool, pf, b);
}

/// `pool_idx,score,selected` rows in pool order; empty score cells for
/// strategies without scores.
inline std::string scores_csv(std::span<const std::size_t> pool, const AcquisitionResult& r) {
  std::string out = "pool_idx,score,selected\n";
  std::vector<std::size_t> sorted_sel(r.selected);
  std::sort(sorted_sel.begin(), sorted_sel.end());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    out += std::to_string(pool[i]);
    out += ',';
    if (r.scores) out += io::fmt_double((*r.scores)[i]);
    out += ',';
    out += std::binary_search(sorted_sel.begin(), sorted_sel.end(), pool[i]) ? '1' : '0';
    out += '\n';
  }
  return out;
}

}  // namespace dsal
