#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "dsal/dsal.hpp"

namespace dsal::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dsal_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Source at (cx, cy) with the second source parked at zero intensity in a
/// corner: the low corner, or with `size` given, the corner farthest away.
inline ScenarioParams isolated_source(double cx, double cy, int size = 0) {
  ScenarioParams p;
  p.cx1 = cx;
  p.cy1 = cy;
  p.q1 = 1.0;
  p.cx2 = p.r;
  p.cy2 = p.r;
  if (size > 0) {
    const double far = size - 1 - p.r;
    if (cx < (size - 1) / 2.0) p.cx2 = far;
    if (cy < (size - 1) / 2.0) p.cy2 = far;
  }
  p.q2 = 0.0;
  return p;
}

inline FieldGrid mirror_lr(const FieldGrid& g) {
  FieldGrid out(g.height, g.width);
  for (int i = 0; i < g.height; ++i)
    for (int j = 0; j < g.width; ++j) out.at(i, g.width - 1 - j) = g.at(i, j);
  return out;
}

inline FieldGrid rotate90(const FieldGrid& g) {
  // (i, j) -> (j, n-1-i): counter-clockwise in (row, col) layout
  const int n = g.height;
  FieldGrid out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.at(n - 1 - j, i) = g.at(i, j);
  return out;
}

inline double max_abs_diff(const FieldGrid& a, const FieldGrid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

/// Small U-Net / CNN specs for fast tests.
inline ModelSpec tiny_spec(Arch a, int size = 8) {
  ModelSpec s;
  s.arch = a;
  s.input_size = size;
  s.encoder_channels = {1, 4, 8};
  if (a == Arch::unet) {
    s.bottleneck_channels = 8;
    s.batch_norm = false;
  }
  return s;
}

/// Dataset of `n` scenarios on size x size lattices with explicit split counts.
inline Dataset small_dataset(std::size_t n, int size, SplitCounts counts, std::uint64_t seed = 11) {
  auto ds = generate_dataset(n, size, PhysicsConfig{}, SolverConfig{}, seed, 1, false);
  split_dataset(ds, counts, seed);
  return ds;
}

}  // namespace dsal::test
