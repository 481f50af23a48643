#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsal/error.hpp"
#include "dsal/nn/tensor.hpp"
#include "dsal/rng.hpp"

namespace dsal::nn {

/// One named slice of the flat parameter or buffer vector.
struct LayoutEntry {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool buffer = false;  ///< running statistics rather than trainable weights
};

/// Flat storage for all trainable parameters, their gradients, and
/// non-trainable buffers. Layers hold offsets into it.
template <class T>
struct ParamStore {
  Buffer<T> values;
  Buffer<T> grads;
  Buffer<T> buffers;
  std::vector<LayoutEntry> layout;

  std::size_t add_param(const std::string& name, std::size_t size) {
    const std::size_t off = values.size();
    values.resize(off + size, T(0));
    grads.resize(off + size, T(0));
    layout.push_back({name, off, size, false});
    return off;
  }
  std::size_t add_buffer(const std::string& name, std::size_t size, T fill) {
    const std::size_t off = buffers.size();
    buffers.resize(off + size, fill);
    layout.push_back({name, off, size, true});
    return off;
  }
  void zero_grad() { std::fill(grads.begin(), grads.end(), T(0)); }
};

enum class Mode {
  eval,        ///< deterministic inference: batch-norm running stats, no dropout
  train,       ///< batch statistics, dropout active, caches kept for backward
  mc_dropout,  ///< inference with dropout active; everything else as in eval
};

struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  ///< required whenever dropout is active

  bool keep_cache() const { return mode == Mode::train; }
  bool dropout_active() const { return mode != Mode::eval; }
  bool batch_stats() const { return mode == Mode::train; }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Square-kernel convolution, stride 1, zero "same" padding, with bias.
template <class T>
struct Conv2d {
  int cin = 0, cout = 0, k = 3;
  std::size_t w_off = 0, b_off = 0;

  Buffer<T> col;   // im2col of the last input (kept for backward in training)
  Buffer<T> dcol;  // scratch for the input gradient
  bool cached = false;
  int n = 0, h = 0, w = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int in_ch, int out_ch, int kernel)
      : cin(in_ch), cout(out_ch), k(kernel) {
    w_off = store.add_param(name + ".weight", static_cast<std::size_t>(cout) * cin * k * k);
    b_off = store.add_param(name + ".bias", static_cast<std::size_t>(cout));
  }

  std::size_t fan_in() const { return static_cast<std::size_t>(cin) * k * k; }

  /// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases.
  void init(ParamStore<T>& store, Rng& rng) const {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in()));
    for (std::size_t i = 0; i < static_cast<std::size_t>(cout) * fan_in(); ++i)
      store.values[w_off + i] = static_cast<T>(rng.uniform(-bound, bound));
    for (int i = 0; i < cout; ++i) store.values[b_off + static_cast<std::size_t>(i)] = T(0);
  }

  void im2col(const Tensor<T>& x, Buffer<T>& out) const {
    const int pad = k / 2;
    const std::size_t cols = x.per_channel();
    out.resize(fan_in() * cols);
    for (int ci = 0; ci < cin; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T* row = out.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
          const int dy = ky - pad, dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::max(x0, std::min(x.w, x.w - dx));
          for (int ni = 0; ni < x.n; ++ni) {
            const T* src = x.plane_ptr(ci, ni);
            T* dst = row + static_cast<std::size_t>(ni) * x.plane();
            for (int yy = 0; yy < x.h; ++yy) {
              T* d = dst + static_cast<std::size_t>(yy) * x.w;
              const int sy = yy + dy;
              if (sy < 0 || sy >= x.h) {
                std::fill(d, d + x.w, T(0));
                continue;
              }
              const T* s = src + static_cast<std::size_t>(sy) * x.w;
              std::fill(d, d + x0, T(0));
              std::copy(s + x0 + dx, s + x1 + dx, d + x0);
              std::fill(d + x1, d + x.w, T(0));
            }
          }
        }
      }
    }
  }

  void col2im(const Buffer<T>& dcol, Tensor<T>& dx) const {
    const int pad = k / 2;
    const std::size_t cols = dx.per_channel();
    for (int ci = 0; ci < cin; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T* row = dcol.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
          const int dy = ky - pad, ddx = kx - pad;
          const int x0 = std::max(0, -ddx), x1 = std::min(dx.w, dx.w - ddx);
          for (int ni = 0; ni < dx.n; ++ni) {
            T* dst = dx.plane_ptr(ci, ni);
            const T* src = row + static_cast<std::size_t>(ni) * dx.plane();
            for (int yy = 0; yy < dx.h; ++yy) {
              const int sy = yy + dy;
              if (sy < 0 || sy >= dx.h) continue;
              T* d = dst + static_cast<std::size_t>(sy) * dx.w;
              const T* s = src + static_cast<std::size_t>(yy) * dx.w;
              for (int xx = x0; xx < x1; ++xx) d[xx + ddx] += s[xx];
            }
          }
        }
      }
    }
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x, const ForwardContext& ctx) {
    if (x.c != cin) throw ShapeError("Conv2d: expected " + std::to_string(cin) + " input channels, got " + std::to_string(x.c));
    n = x.n;
    h = x.h;
    w = x.w;
    im2col(x, col);
    cached = ctx.keep_cache();
    const Buffer<T>& buf = col;
    auto y = Tensor<T>::uninitialized(cout, x.n, x.h, x.w);
    const auto cols = static_cast<Eigen::Index>(x.per_channel());
    ConstMatMap<T> wm(store.values.data() + w_off, cout, static_cast<Eigen::Index>(fan_in()));
    ConstMatMap<T> cm(buf.data(), static_cast<Eigen::Index>(fan_in()), cols);
    MatMap<T> ym(y.v.data(), cout, cols);
    ym.noalias() = wm * cm;
    for (int co = 0; co < cout; ++co) ym.row(co).array() += store.values[b_off + static_cast<std::size_t>(co)];
    return y;
  }

  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& dy) {
    if (!cached) throw Error("Conv2d::backward called without a cached training forward");
    const auto cols = static_cast<Eigen::Index>(dy.per_channel());
    const auto fi = static_cast<Eigen::Index>(fan_in());
    ConstMatMap<T> dym(dy.v.data(), cout, cols);
    ConstMatMap<T> cm(col.data(), fi, cols);
    MatMap<T> dw(store.grads.data() + w_off, cout, fi);
    dw.noalias() += dym * cm.transpose();
    for (int co = 0; co < cout; ++co) store.grads[b_off + static_cast<std::size_t>(co)] += dym.row(co).sum();
    dcol.resize(static_cast<std::size_t>(fi) * static_cast<std::size_t>(cols));
    ConstMatMap<T> wm(store.values.data() + w_off, cout, fi);
    MatMap<T> dcm(dcol.data(), fi, cols);
    dcm.noalias() = wm.transpose() * dym;
    Tensor<T> dx(cin, n, h, w);
    col2im(dcol, dx);
    cached = false;
    return dx;
  }
};

/// Per-channel batch normalization with running statistics.
template <class T>
struct BatchNorm2d {
  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  std::size_t gamma_off = 0, beta_off = 0, mean_off = 0, var_off = 0;

  std::vector<T> xhat, inv_std;
  int n = 0, h = 0, w = 0;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& name, int ch) : channels(ch) {
    gamma_off = store.add_param(name + ".gamma", static_cast<std::size_t>(ch));
    beta_off = store.add_param(name + ".beta", static_cast<std::size_t>(ch));
    mean_off = store.add_buffer(name + ".running_mean", static_cast<std::size_t>(ch), T(0));
    var_off = store.add_buffer(name + ".running_var", static_cast<std::size_t>(ch), T(1));
  }

  void init(ParamStore<T>& store) const {
    for (int c = 0; c < channels; ++c) {
      store.values[gamma_off + static_cast<std::size_t>(c)] = T(1);
      store.values[beta_off + static_cast<std::size_t>(c)] = T(0);
      store.buffers[mean_off + static_cast<std::size_t>(c)] = T(0);
      store.buffers[var_off + static_cast<std::size_t>(c)] = T(1);
    }
  }

  Tensor<T> forward(ParamStore<T>& store, const Tensor<T>& x, const ForwardContext& ctx) {
    if (x.c != channels) throw ShapeError("BatchNorm2d: channel mismatch");
    n = x.n;
    h = x.h;
    w = x.w;
    auto y = Tensor<T>::uninitialized(x.c, x.n, x.h, x.w);
    const std::size_t m = x.per_channel();
    if (ctx.keep_cache()) {
      xhat.resize(x.size());
      inv_std.resize(static_cast<std::size_t>(channels));
    }
    for (int c = 0; c < channels; ++c) {
      const T* src = x.channel(c);
      T* dst = y.channel(c);
      const auto cs = static_cast<std::size_t>(c);
      double mean, var;
      if (ctx.batch_stats()) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += static_cast<double>(src[i]);
        mean = s / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double d = static_cast<double>(src[i]) - mean;
          ss += d * d;
        }
        var = ss / static_cast<double>(m);
        const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
        T& rm = store.buffers[mean_off + cs];
        T& rv = store.buffers[var_off + cs];
        rm = static_cast<T>((1.0 - momentum) * static_cast<double>(rm) + momentum * mean);
        rv = static_cast<T>((1.0 - momentum) * static_cast<double>(rv) + momentum * unbiased);
      } else {
        mean = static_cast<double>(store.buffers[mean_off + cs]);
        var = static_cast<double>(store.buffers[var_off + cs]);
      }
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
      const T mu = static_cast<T>(mean);
      const T g = store.values[gamma_off + cs];
      const T b = store.values[beta_off + cs];
      T* xh = ctx.keep_cache() ? xhat.data() + cs * m : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        const T xn = (src[i] - mu) * istd;
        if (xh) xh[i] = xn;
        dst[i] = g * xn + b;
      }
      if (ctx.keep_cache()) inv_std[cs] = istd;
    }
    return y;
  }

  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& dy) {
    auto dx = Tensor<T>::uninitialized(dy.c, dy.n, dy.h, dy.w);
    const std::size_t m = dy.per_channel();
    for (int c = 0; c < channels; ++c) {
      const auto cs = static_cast<std::size_t>(c);
      const T* g = dy.channel(c);
      const T* xh = xhat.data() + cs * m;
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        sum_g += static_cast<double>(g[i]);
        sum_gx += static_cast<double>(g[i]) * static_cast<double>(xh[i]);
      }
      store.grads[gamma_off + cs] += static_cast<T>(sum_gx);
      store.grads[beta_off + cs] += static_cast<T>(sum_g);
      const T scale = store.values[gamma_off + cs] * inv_std[cs] / static_cast<T>(m);
      const T mg = static_cast<T>(sum_g), mgx = static_cast<T>(sum_gx);
      T* d = dx.channel(c);
      for (std::size_t i = 0; i < m; ++i) d[i] = scale * (static_cast<T>(m) * g[i] - mg - xh[i] * mgx);
    }
    return dx;
  }
};

/// max(x, slope * x); slope 0 gives ReLU.
template <class T>
struct LeakyRelu {
  T slope = T(0);
  std::vector<std::uint8_t> positive;

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    Tensor<T> y = x;
    if (ctx.keep_cache()) positive.resize(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool pos = y.v[i] > T(0);
      if (!pos) y.v[i] *= slope;
      if (ctx.keep_cache()) positive[i] = pos;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!positive[i]) dx.v[i] *= slope;
    return dx;
  }
};

/// Inverted dropout: kept units are scaled by 1/(1-rate).
template <class T>
struct Dropout {
  double rate = 0.0;
  std::vector<T> mask;

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    if (rate <= 0.0 || !ctx.dropout_active()) {
      mask.clear();
      return x;
    }
    if (!ctx.rng) throw ConfigError("Dropout: active dropout requires a random stream");
    Tensor<T> y = x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    mask.resize(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask[i] = ctx.rng->uniform01() < rate ? T(0) : keep_scale;
      y.v[i] *= mask[i];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (mask.empty()) return dy;
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] *= mask[i];
    return dx;
  }
};

/// 2x2 pooling with stride 2; odd trailing rows/columns are dropped
/// (25 -> 12).
template <class T>
struct Pool2 {
  enum class Kind { average, max } kind = Kind::max;
  std::vector<std::uint32_t> argmax;
  int n = 0, c = 0, h = 0, w = 0;

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    const int oh = x.h / 2, ow = x.w / 2;
    if (oh < 1 || ow < 1) throw ShapeError("Pool2: input smaller than the pooling window");
    c = x.c;
    n = x.n;
    h = x.h;
    w = x.w;
    auto y = Tensor<T>::uninitialized(x.c, x.n, oh, ow);
    const bool cache = ctx.keep_cache() && kind == Kind::max;
    if (cache) argmax.resize(y.size());
    std::size_t o = 0;
    for (int ci = 0; ci < x.c; ++ci) {
      for (int ni = 0; ni < x.n; ++ni) {
        const T* src = x.plane_ptr(ci, ni);
        for (int yy = 0; yy < oh; ++yy) {
          for (int xx = 0; xx < ow; ++xx, ++o) {
            const std::size_t p00 = static_cast<std::size_t>(2 * yy) * x.w + 2 * xx;
            const std::size_t idx[4] = {p00, p00 + 1, p00 + static_cast<std::size_t>(x.w), p00 + static_cast<std::size_t>(x.w) + 1};
            if (kind == Kind::average) {
              y.v[o] = (src[idx[0]] + src[idx[1]] + src[idx[2]] + src[idx[3]]) * T(0.25);
            } else {
              std::size_t best = idx[0];
              for (int q = 1; q < 4; ++q)
                if (src[idx[q]] > src[best]) best = idx[q];
              y.v[o] = src[best];
              if (cache) argmax[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(c, n, h, w);
    std::size_t o = 0;
    for (int ci = 0; ci < c; ++ci) {
      for (int ni = 0; ni < n; ++ni) {
        T* dst = dx.plane_ptr(ci, ni);
        for (int yy = 0; yy < dy.h; ++yy) {
          for (int xx = 0; xx < dy.w; ++xx, ++o) {
            if (kind == Kind::average) {
              const std::size_t p00 = static_cast<std::size_t>(2 * yy) * w + 2 * xx;
              const T g = dy.v[o] * T(0.25);
              dst[p00] += g;
              dst[p00 + 1] += g;
              dst[p00 + static_cast<std::size_t>(w)] += g;
              dst[p00 + static_cast<std::size_t>(w) + 1] += g;
            } else {
              dst[argmax[o]] += dy.v[o];
            }
          }
        }
      }
    }
    return dx;
  }
};

/// Nearest-neighbour resize to an exact target size:
/// out(y, x) = in(floor(y * H_in / H_out), floor(x * W_in / W_out)).
template <class T>
struct UpsampleNearest {
  int out_h = 0, out_w = 0;
  int in_h = 0, in_w = 0;

  std::vector<std::size_t> source_index(int ih, int iw) const {
    std::vector<std::size_t> map(static_cast<std::size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
      const int sy = static_cast<int>(static_cast<long long>(y) * ih / out_h);
      for (int x = 0; x < out_w; ++x) {
        const int sx = static_cast<int>(static_cast<long long>(x) * iw / out_w);
        map[static_cast<std::size_t>(y) * out_w + x] = static_cast<std::size_t>(sy) * iw + sx;
      }
    }
    return map;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    in_h = x.h;
    in_w = x.w;
    const auto map = source_index(x.h, x.w);
    auto y = Tensor<T>::uninitialized(x.c, x.n, out_h, out_w);
    for (int ci = 0; ci < x.c; ++ci) {
      for (int ni = 0; ni < x.n; ++ni) {
        const T* src = x.plane_ptr(ci, ni);
        T* dst = y.plane_ptr(ci, ni);
        for (std::size_t i = 0; i < map.size(); ++i) dst[i] = src[map[i]];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const auto map = source_index(in_h, in_w);
    Tensor<T> dx(dy.c, dy.n, in_h, in_w);
    for (int ci = 0; ci < dy.c; ++ci) {
      for (int ni = 0; ni < dy.n; ++ni) {
        const T* src = dy.plane_ptr(ci, ni);
        T* dst = dx.plane_ptr(ci, ni);
        for (std::size_t i = 0; i < map.size(); ++i) dst[map[i]] += src[i];
      }
    }
    return dx;
  }
};

}  // namespace dsal::nn
