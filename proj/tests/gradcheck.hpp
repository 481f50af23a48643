#pragma once

#include <cmath>
#include <vector>

#include "dsal/dsal.hpp"

namespace dsal::test {

struct GradcheckResult {
  double max_rel = 0.0;
  std::size_t checked = 0, total = 0, worst_index = 0;
};

/// Central differences on every parameter of a double-precision model,
/// against the analytic gradient of the weighted-MAE loss on one batch.
/// Parameters whose analytic and numeric gradients are both below `floor`
/// are skipped (dead ReLU units).
inline GradcheckResult gradcheck(const ModelSpec& spec, std::uint64_t seed, int batch = 2, double h = 1e-6,
                                 double floor = 1e-7) {
  nn::Model<double> model(spec, seed);
  Rng rng(derive_seed(seed, {0x4743}));
  const int s = spec.input_size;
  nn::Tensor<double> x(1, batch, s, s), y(1, batch, s, s);
  for (auto& v : x.v) v = rng.uniform01();
  for (auto& v : y.v) v = rng.uniform01();
  // perturb the zero initial biases so they are exercised too
  for (auto& v : model.store().values) v += 0.05 * (rng.uniform01() - 0.5);

  const nn::ForwardContext ctx{nn::Mode::train, nullptr};
  auto loss_at = [&] {
    return weighted_mae_loss(model.forward(x, ctx), y, 0.2, static_cast<nn::Tensor<double>*>(nullptr));
  };
  nn::Tensor<double> g;
  weighted_mae_loss(model.forward(x, ctx), y, 0.2, &g);
  model.zero_grad();
  model.backward(g);
  const std::vector<double> analytic(model.store().grads.begin(), model.store().grads.end());

  GradcheckResult r;
  auto& p = model.store().values;
  r.total = p.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = loss_at();
    p[i] = keep - h;
    const double down = loss_at();
    p[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[i];
    const double scale = std::max(std::abs(a), std::abs(numeric));
    if (scale < floor) continue;
    const double rel = std::abs(a - numeric) / scale;
    ++r.checked;
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace dsal::test
