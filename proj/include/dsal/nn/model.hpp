#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dsal/error.hpp"
#include "dsal/nn/layers.hpp"
#include "dsal/nn/tensor.hpp"
#include "dsal/rng.hpp"
#include "json.hpp"

namespace dsal::nn {

enum class Arch { cnn_autoencoder, unet };

inline const char* to_string(Arch a) { return a == Arch::unet ? "unet" : "cnn"; }
inline Arch parse_arch(const std::string& s) {
  if (s == "unet" || s == "u-net") return Arch::unet;
  if (s == "cnn" || s == "cnn-autoencoder" || s == "cnn_autoencoder") return Arch::cnn_autoencoder;
  throw ConfigError("unknown architecture '" + s + "' (expected unet or cnn)");
}

struct Shape {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape&) const = default;
};

/// Architecture description. `encoder_channels` starts with the input
/// channel count; each further entry adds one halving stage.
struct ModelSpec {
  Arch arch = Arch::unet;
  int input_size = 32;
  std::vector<int> encoder_channels;
  int bottleneck_channels = 0;  ///< U-Net only
  int kernel_size = 3;
  double leaky_slope = 0.02;    ///< CNN autoencoder only
  double dropout_rate = 0.0;    ///< CNN autoencoder only; applied after the first two batch norms
  bool batch_norm = true;       ///< CNN autoencoder only

  /// Full-size networks: 100x100 inputs with the published channel tables.
  static ModelSpec full(Arch a) {
    ModelSpec s;
    s.arch = a;
    s.input_size = 100;
    if (a == Arch::cnn_autoencoder) {
      s.encoder_channels = {1, 64, 128, 256, 512, 1024, 2048};
    } else {
      s.encoder_channels = {1, 64, 128, 256, 512};
      s.bottleneck_channels = 1024;
      s.batch_norm = false;
    }
    return s;
  }

  /// Laptop-sized networks for 32x32 lattices: same topology with narrower
  /// channels; the CNN has five halvings (32 -> 1) instead of six.
  static ModelSpec desk(Arch a) {
    ModelSpec s;
    s.arch = a;
    s.input_size = 32;
    if (a == Arch::cnn_autoencoder) {
      s.encoder_channels = {1, 8, 16, 32, 64, 128};
    } else {
      s.encoder_channels = {1, 8, 16, 32, 64};
      s.bottleneck_channels = 128;
      s.batch_norm = false;
    }
    return s;
  }

  int stages() const { return static_cast<int>(encoder_channels.size()) - 1; }

  /// Spatial sizes visited by the encoder, starting at the input size.
  std::vector<int> spatial_sizes() const {
    std::vector<int> sizes{input_size};
    const int halvings = arch == Arch::unet ? stages() + 1 : stages();
    for (int i = 0; i < halvings; ++i) sizes.push_back(sizes.back() / 2);
    return sizes;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("ModelSpec: " + m); };
    if (encoder_channels.size() < 2) fail("need at least one encoder stage");
    if (encoder_channels.front() != 1) fail("first channel entry must be 1 (single-channel input)");
    for (int c : encoder_channels)
      if (c < 1) fail("channel counts must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel size must be odd");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout rate must lie in [0, 1)");
    if (input_size < 1) fail("input size must be positive");
    for (int s : spatial_sizes())
      if (s < 1) fail("input size " + std::to_string(input_size) + " halves to zero within the encoder");
    if (arch == Arch::unet) {
      if (bottleneck_channels < 1) fail("U-Net needs a positive bottleneck channel count");
      if (dropout_rate > 0.0) fail("dropout is not defined for the U-Net (entropy acquisition is CNN-only)");
    }
    if (!(leaky_slope >= 0.0)) fail("leaky slope must be non-negative");
  }

  bool operator==(const ModelSpec&) const = default;
};

inline nlohmann::json to_json(const ModelSpec& s) {
  return {{"arch", to_string(s.arch)},       {"input_size", s.input_size},   {"encoder_channels", s.encoder_channels},
          {"bottleneck_channels", s.bottleneck_channels}, {"kernel_size", s.kernel_size}, {"leaky_slope", s.leaky_slope},
          {"dropout_rate", s.dropout_rate}, {"batch_norm", s.batch_norm}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.arch = parse_arch(j.at("arch").get<std::string>());
  s.input_size = j.at("input_size").get<int>();
  s.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  s.bottleneck_channels = j.value("bottleneck_channels", 0);
  s.kernel_size = j.value("kernel_size", 3);
  s.leaky_slope = j.value("leaky_slope", 0.02);
  s.dropout_rate = j.value("dropout_rate", 0.0);
  s.batch_norm = j.value("batch_norm", s.arch == Arch::cnn_autoencoder);
  return s;
}

/// Trainable values plus buffers; what a checkpoint or snapshot stores.
template <class T>
struct ModelState {
  Buffer<T> params;
  Buffer<T> buffers;
  bool operator==(const ModelState&) const = default;
};

template <class T>
class CnnAutoencoder {
 public:
  CnnAutoencoder(const ModelSpec& spec, ParamStore<T>& store) {
    const auto& ch = spec.encoder_channels;
    const auto sizes = spec.spatial_sizes();
    const int stages = spec.stages();
    for (int s = 0; s < stages; ++s) {
      Enc e;
      const std::string name = "enc" + std::to_string(s);
      e.conv = Conv2d<T>(store, name + ".conv", ch[s], ch[s + 1], spec.kernel_size);
      if (spec.batch_norm) e.bn = BatchNorm2d<T>(store, name + ".bn", ch[s + 1]);
      if (s < 2) e.drop.rate = spec.dropout_rate;
      e.act.slope = static_cast<T>(spec.leaky_slope);
      e.pool.kind = Pool2<T>::Kind::average;
      enc_.push_back(std::move(e));
    }
    for (int s = stages - 1; s >= 0; --s) {
      Dec d;
      const std::string name = "dec" + std::to_string(s);
      d.up.out_h = d.up.out_w = sizes[static_cast<std::size_t>(s)];
      d.conv = Conv2d<T>(store, name + ".conv", ch[s + 1], ch[s], spec.kernel_size);
      d.last = s == 0;
      if (!d.last && spec.batch_norm) d.bn = BatchNorm2d<T>(store, name + ".bn", ch[s]);
      d.act.slope = static_cast<T>(spec.leaky_slope);
      dec_.push_back(std::move(d));
    }
  }

  void init(ParamStore<T>& store, Rng& rng) const {
    for (const auto& e : enc_) {
      e.conv.init(store, rng);
      if (e.bn) e.bn->init(store);
    }
    for (const auto& d : dec_) {
      d.conv.init(store, rng);
      if (d.bn) d.bn->init(store);
    }
  }

  Tensor<T> forward(ParamStore<T>& store, Tensor<T> x, const ForwardContext& ctx) {
    for (auto& e : enc_) {
      x = e.conv.forward(store, x, ctx);
      if (e.bn) x = e.bn->forward(store, x, ctx);
      x = e.drop.forward(x, ctx);
      x = e.act.forward(x, ctx);
      x = e.pool.forward(x, ctx);
    }
    innermost_ = {x.c, x.h, x.w};
    for (auto& d : dec_) {
      x = d.up.forward(x);
      x = d.conv.forward(store, x, ctx);
      if (d.last) continue;
      if (d.bn) x = d.bn->forward(store, x, ctx);
      x = d.act.forward(x, ctx);
    }
    return x;
  }

  Tensor<T> backward(ParamStore<T>& store, Tensor<T> g) {
    for (auto it = dec_.rbegin(); it != dec_.rend(); ++it) {
      auto& d = *it;
      if (!d.last) {
        g = d.act.backward(g);
        if (d.bn) g = d.bn->backward(store, g);
      }
      g = d.conv.backward(store, g);
      g = d.up.backward(g);
    }
    for (auto it = enc_.rbegin(); it != enc_.rend(); ++it) {
      auto& e = *it;
      g = e.pool.backward(g);
      g = e.act.backward(g);
      g = e.drop.backward(g);
      if (e.bn) g = e.bn->backward(store, g);
      g = e.conv.backward(store, g);
    }
    return g;
  }

  Shape innermost() const { return innermost_; }

 private:
  struct Enc {
    Conv2d<T> conv;
    std::optional<BatchNorm2d<T>> bn;
    Dropout<T> drop;
    LeakyRelu<T> act;
    Pool2<T> pool;
  };
  struct Dec {
    UpsampleNearest<T> up;
    Conv2d<T> conv;
    std::optional<BatchNorm2d<T>> bn;
    LeakyRelu<T> act;
    bool last = false;
  };
  std::vector<Enc> enc_;
  std::vector<Dec> dec_;
  Shape innermost_;
};

/// Two 'same' convolutions, each followed by ReLU.
template <class T>
struct DoubleConv {
  Conv2d<T> c1, c2;
  LeakyRelu<T> a1, a2;

  DoubleConv() = default;
  DoubleConv(ParamStore<T>& store, const std::string& name, int cin, int cout, int k)
      : c1(store, name + ".conv1", cin, cout, k), c2(store, name + ".conv2", cout, cout, k) {}

  void init(ParamStore<T>& store, Rng& rng) const {
    c1.init(store, rng);
    c2.init(store, rng);
  }
  Tensor<T> forward(ParamStore<T>& store, const Tensor<T>& x, const ForwardContext& ctx) {
    auto y = a1.forward(c1.forward(store, x, ctx), ctx);
    return a2.forward(c2.forward(store, y, ctx), ctx);
  }
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& g) {
    auto d = c2.backward(store, a2.backward(g));
    return c1.backward(store, a1.backward(d));
  }
};

/// U-Net: each down block convolves at its input size then max-pools; the
/// pooled output feeds the next block and is concatenated into the decoder
/// block of the same size. A final layer restores the input size and maps
/// to one channel.
template <class T>
class UNet {
 public:
  UNet(const ModelSpec& spec, ParamStore<T>& store) {
    const auto& ch = spec.encoder_channels;
    const auto sizes = spec.spatial_sizes();
    const int blocks = spec.stages();
    for (int b = 0; b < blocks; ++b) {
      Down d;
      d.block = DoubleConv<T>(store, "down" + std::to_string(b), ch[b], ch[b + 1], spec.kernel_size);
      d.pool.kind = Pool2<T>::Kind::max;
      down_.push_back(std::move(d));
    }
    bottleneck_pool_.kind = Pool2<T>::Kind::max;
    bottleneck_ = DoubleConv<T>(store, "bottleneck", ch[blocks], spec.bottleneck_channels, spec.kernel_size);
    int prev = spec.bottleneck_channels;
    for (int b = blocks - 1; b >= 0; --b) {
      Up u;
      u.up.out_h = u.up.out_w = sizes[static_cast<std::size_t>(b + 1)];
      u.skip_channels = ch[b + 1];
      u.block = DoubleConv<T>(store, "up" + std::to_string(b), prev + ch[b + 1], ch[b + 1], spec.kernel_size);
      prev = ch[b + 1];
      up_.push_back(std::move(u));
    }
    final_up_.out_h = final_up_.out_w = sizes.front();
    final_conv_ = Conv2d<T>(store, "final.conv", ch[1], 1, spec.kernel_size);
  }

  void init(ParamStore<T>& store, Rng& rng) const {
    for (const auto& d : down_) d.block.init(store, rng);
    bottleneck_.init(store, rng);
    for (const auto& u : up_) u.block.init(store, rng);
    final_conv_.init(store, rng);
  }

  Tensor<T> forward(ParamStore<T>& store, Tensor<T> x, const ForwardContext& ctx) {
    std::vector<Tensor<T>> skips;
    for (auto& d : down_) {
      x = d.pool.forward(d.block.forward(store, x, ctx), ctx);
      skips.push_back(x);
    }
    x = bottleneck_.forward(store, bottleneck_pool_.forward(x, ctx), ctx);
    innermost_ = {x.c, x.h, x.w};
    for (std::size_t i = 0; i < up_.size(); ++i) {
      auto& u = up_[i];
      const std::size_t b = down_.size() - 1 - i;
      Tensor<T>& skip = skips[b];
      if (ablate_skip == static_cast<int>(b)) std::fill(skip.v.begin(), skip.v.end(), T(0));
      x = u.block.forward(store, concat_channels(u.up.forward(x), skip), ctx);
    }
    return final_conv_.forward(store, final_up_.forward(x), ctx);
  }

  Tensor<T> backward(ParamStore<T>& store, Tensor<T> g) {
    g = final_up_.backward(final_conv_.backward(store, g));
    std::vector<Tensor<T>> skip_grads(down_.size());
    for (std::size_t i = up_.size(); i-- > 0;) {
      auto& u = up_[i];
      const std::size_t b = down_.size() - 1 - i;
      auto [g_up, g_skip] = split_channels(u.block.backward(store, g), u.block.c1.cin - u.skip_channels);
      skip_grads[b] = std::move(g_skip);
      g = u.up.backward(g_up);
    }
    g = bottleneck_pool_.backward(bottleneck_.backward(store, g));
    for (std::size_t b = down_.size(); b-- > 0;) {
      for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += skip_grads[b].v[i];
      g = down_[b].block.backward(store, down_[b].pool.backward(g));
    }
    return g;
  }

  Shape innermost() const { return innermost_; }

  /// Test hook: zero the skip tensor of one encoder block before concatenation.
  int ablate_skip = -1;

 private:
  struct Down {
    DoubleConv<T> block;
    Pool2<T> pool;
  };
  struct Up {
    UpsampleNearest<T> up;
    DoubleConv<T> block;
    int skip_channels = 0;
  };
  std::vector<Down> down_;
  Pool2<T> bottleneck_pool_;
  DoubleConv<T> bottleneck_;
  std::vector<Up> up_;
  UpsampleNearest<T> final_up_;
  Conv2d<T> final_conv_;
  Shape innermost_;
};

/// A surrogate network with its parameters. Copyable value type; copies
/// share nothing.
template <class T>
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed) : spec_(validated(std::move(spec))), net_(make_net(spec_, store_)) {
    Rng rng(derive_seed(init_seed, {0x494e4954ULL}));
    std::visit([&](auto& n) { n.init(store_, rng); }, net_);
  }

  const ModelSpec& spec() const { return spec_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  std::size_t parameter_count() const { return store_.values.size(); }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    if (x.c != 1 || x.h != spec_.input_size || x.w != spec_.input_size) {
      throw ShapeError("Model::forward: expected 1x" + std::to_string(spec_.input_size) + "x" + std::to_string(spec_.input_size) +
                       " inputs, got " + std::to_string(x.c) + "x" + std::to_string(x.h) + "x" + std::to_string(x.w));
    }
    return std::visit([&](auto& n) { return n.forward(store_, x, ctx); }, net_);
  }

  /// Accumulates parameter gradients for the last Mode::train forward.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    return std::visit([&](auto& n) { return n.backward(store_, grad_out); }, net_);
  }

  void zero_grad() { store_.zero_grad(); }

  /// Shape of the deepest feature map seen by the last forward pass.
  Shape innermost_shape() const {
    return std::visit([](const auto& n) { return n.innermost(); }, net_);
  }

  ModelState<T> state() const { return {store_.values, store_.buffers}; }
  void load_state(const ModelState<T>& s) {
    if (s.params.size() != store_.values.size() || s.buffers.size() != store_.buffers.size()) {
      throw ShapeError("Model::load_state: state layout does not match the model");
    }
    store_.values = s.params;
    store_.buffers = s.buffers;
  }

  UNet<T>* unet() { return std::get_if<UNet<T>>(&net_); }

 private:
  using Net = std::variant<CnnAutoencoder<T>, UNet<T>>;

  static ModelSpec validated(ModelSpec s) {
    s.validate();
    return s;
  }
  static Net make_net(const ModelSpec& s, ParamStore<T>& store) {
    if (s.arch == Arch::unet) return Net(std::in_place_type<UNet<T>>, s, store);
    return Net(std::in_place_type<CnnAutoencoder<T>>, s, store);
  }

  ModelSpec spec_;
  ParamStore<T> store_;
  Net net_;
};

}  // namespace dsal::nn
