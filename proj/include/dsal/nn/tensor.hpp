#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <new>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "dsal/error.hpp"

namespace dsal::nn {

/// 64-byte aligned storage. Eigen's vectorized kernels peel differently
/// depending on where an operand starts, which changes rounding; fixing the
/// alignment keeps results identical from run to run.
template <class T>
struct aligned_allocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  aligned_allocator() = default;
  template <class U>
  aligned_allocator(const aligned_allocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const aligned_allocator<U>&) const noexcept {
    return true;
  }
};

/// Allocator whose value-less construct() default-initializes, so resizing
/// a buffer of floats does not zero it.
template <class T, class A = aligned_allocator<T>>
class default_init_allocator : public A {
  using traits = std::allocator_traits<A>;

 public:
  template <class U>
  struct rebind {
    using other = default_init_allocator<U, typename traits::template rebind_alloc<U>>;
  };
  using A::A;

  template <class U>
  void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <class U, class... Args>
  void construct(U* ptr, Args&&... args) {
    traits::construct(static_cast<A&>(*this), ptr, std::forward<Args>(args)...);
  }
};

template <class T>
using Buffer = std::vector<T, default_init_allocator<T>>;

/// Activation tensor in channel-major (C, N, H, W) layout: every channel is a
/// contiguous block of N*H*W values. Convolutions then reduce to one matrix
/// product over the whole batch, and channel concatenation is an append.
template <class T>
struct Tensor {
  int c = 0, n = 0, h = 0, w = 0;
  Buffer<T> v;

  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, T fill = T(0))
      : c(channels), n(batch), h(height), w(width), v(static_cast<std::size_t>(channels) * per_channel_of(batch, height, width), fill) {}

  /// Tensor whose contents are left for the caller to overwrite.
  static Tensor uninitialized(int channels, int batch, int height, int width) {
    Tensor t;
    t.c = channels;
    t.n = batch;
    t.h = height;
    t.w = width;
    t.v.resize(static_cast<std::size_t>(channels) * per_channel_of(batch, height, width));
    return t;
  }

  static std::size_t per_channel_of(int batch, int height, int width) {
    return static_cast<std::size_t>(batch) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::size_t per_channel() const { return per_channel_of(n, h, w); }
  std::size_t size() const { return v.size(); }

  T* channel(int ci) { return v.data() + static_cast<std::size_t>(ci) * per_channel(); }
  const T* channel(int ci) const { return v.data() + static_cast<std::size_t>(ci) * per_channel(); }
  T* plane_ptr(int ci, int ni) { return channel(ci) + static_cast<std::size_t>(ni) * plane(); }
  const T* plane_ptr(int ci, int ni) const { return channel(ci) + static_cast<std::size_t>(ni) * plane(); }

  T& at(int ci, int ni, int y, int x) { return plane_ptr(ci, ni)[static_cast<std::size_t>(y) * w + x]; }
  T at(int ci, int ni, int y, int x) const { return plane_ptr(ci, ni)[static_cast<std::size_t>(y) * w + x]; }

  bool same_shape(const Tensor& o) const { return c == o.c && n == o.n && h == o.h && w == o.w; }
};

/// Concatenates along channels; batch and spatial sizes must agree.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeError("concat_channels: batch/spatial shape mismatch");
  Tensor<T> out;
  out.c = a.c + b.c;
  out.n = a.n;
  out.h = a.h;
  out.w = a.w;
  out.v.reserve(a.size() + b.size());
  out.v.insert(out.v.end(), a.v.begin(), a.v.end());
  out.v.insert(out.v.end(), b.v.begin(), b.v.end());
  return out;
}

/// Inverse of concat_channels: first `channels_a` channels go to the first result.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int channels_a) {
  auto a = Tensor<T>::uninitialized(channels_a, t.n, t.h, t.w);
  auto b = Tensor<T>::uninitialized(t.c - channels_a, t.n, t.h, t.w);
  const auto cut = t.v.begin() + static_cast<std::ptrdiff_t>(a.size());
  std::copy(t.v.begin(), cut, a.v.begin());
  std::copy(cut, t.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

}  // namespace dsal::nn
