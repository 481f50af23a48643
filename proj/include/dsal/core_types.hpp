#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "dsal/error.hpp"

namespace dsal {

/// Generative parameters of one two-source scenario.
///
/// Coordinates are continuous lattice units; `cx` indexes columns and `cy`
/// rows. The center distance is derived on demand and never stored.
struct ScenarioParams {
  double cx1 = 0.0;
  double cy1 = 0.0;
  double cx2 = 0.0;
  double cy2 = 0.0;
  double q1 = 1.0;
  double q2 = 0.0;
  double r = 5.0;

  double d() const noexcept { return std::hypot(cx1 - cx2, cy1 - cy2); }

  /// Throws ConfigError unless both disks fit in a size x size lattice,
  /// q1 == 1, q2 in [0,1] and (unless allowed) the disks do not overlap.
  void validate(int size, bool allow_overlap = false) const {
    auto fail = [](const std::string& msg) { throw ConfigError("ScenarioParams: " + msg); };
    if (!(r > 0.0)) fail("source radius must be positive");
    const double hi = static_cast<double>(size) - 1.0 - r;
    for (double c : {cx1, cy1, cx2, cy2}) {
      if (!std::isfinite(c) || c < r || c > hi) {
        std::ostringstream os;
        os << "source center coordinate " << c << " outside [" << r << ", " << hi << "]";
        fail(os.str());
      }
    }
    if (q1 != 1.0) fail("q1 must be exactly 1");
    if (!(q2 >= 0.0 && q2 <= 1.0)) fail("q2 must lie in [0, 1]");
    if (!allow_overlap && d() < 2.0 * r) fail("source disks overlap (d < 2r)");
  }

  bool operator==(const ScenarioParams&) const = default;
};

/// Six-component identifier used for parameter-diversity selection:
/// (cx1, cy1, cx2, cy2, d, q2).
inline std::vector<double> identifier(const ScenarioParams& p) {
  return {p.cx1, p.cy1, p.cx2, p.cy2, p.d(), p.q2};
}

/// Row-major scalar lattice.
struct FieldGrid {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  FieldGrid() = default;
  FieldGrid(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::size_t size() const noexcept { return values.size(); }
  double& at(int row, int col) { return values[index(row, col)]; }
  double at(int row, int col) const { return values[index(row, col)]; }
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col);
  }

  bool same_shape(const FieldGrid& o) const noexcept { return height == o.height && width == o.width; }
  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const FieldGrid&) const = default;
};

inline void require_same_shape(const FieldGrid& a, const FieldGrid& b, const char* where) {
  if (!a.same_shape(b) || a.values.size() != b.values.size()) {
    std::ostringstream os;
    os << where << ": shape mismatch " << a.height << "x" << a.width << " vs " << b.height << "x" << b.width;
    throw ShapeError(os.str());
  }
}

/// Diffusion constants. The diffusion length is derived, never stored.
struct PhysicsConfig {
  double D = 1.0;
  double gamma = 1.0 / 400.0;

  double diffusion_length() const { return std::sqrt(D / gamma); }

  void validate() const {
    if (!(D > 0.0) || !std::isfinite(D)) throw ConfigError("PhysicsConfig: D must be positive");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("PhysicsConfig: gamma must be positive");
  }

  bool operator==(const PhysicsConfig&) const = default;
};

/// Rasterizes the two source disks: a pixel takes intensity q_k when its
/// integer center lies within distance r of source k, the larger intensity
/// wins where disks overlap, and every other pixel is zero.
inline FieldGrid render_input(const ScenarioParams& p, int size, bool allow_overlap = false) {
  if (size < static_cast<int>(std::ceil(2.0 * p.r)) + 2) throw ConfigError("render_input: lattice too small for source radius");
  p.validate(size, allow_overlap);
  FieldGrid g(size, size);
  const double r2 = p.r * p.r;
  auto stamp = [&](double cx, double cy, double q) {
    const int r0 = std::max(0, static_cast<int>(std::floor(cy - p.r)));
    const int r1 = std::min(size - 1, static_cast<int>(std::ceil(cy + p.r)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cx - p.r)));
    const int c1 = std::min(size - 1, static_cast<int>(std::ceil(cx + p.r)));
    for (int i = r0; i <= r1; ++i) {
      for (int j = c0; j <= c1; ++j) {
        const double dx = j - cx;
        const double dy = i - cy;
        if (dx * dx + dy * dy <= r2) g.at(i, j) = std::max(g.at(i, j), q);
      }
    }
  };
  stamp(p.cx1, p.cy1, p.q1);
  stamp(p.cx2, p.cy2, p.q2);
  return g;
}

/// Boolean lattice mask (one byte per pixel).
using Mask = std::vector<std::uint8_t>;

inline std::size_t count(const Mask& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

/// Regions of interest: source disks, the complementary field, and three
/// bands of the target value.
struct RegionMasks {
  int height = 0;
  int width = 0;
  Mask src, field, ring1, ring2, ring3;

  static constexpr double ring1_lo = 0.2, ring1_hi = 1.0;
  static constexpr double ring2_lo = 0.1;
  static constexpr double ring3_lo = 0.05;
};

/// src = {input > 0}; field = complement; ring1 = target in [0.2, 1.0];
/// ring2 = target in [0.1, 0.2); ring3 = target in [0.05, 0.1).
inline RegionMasks compute_region_masks(const FieldGrid& input, const FieldGrid& target) {
  require_same_shape(input, target, "compute_region_masks");
  if (!target.all_finite()) throw ConfigError("compute_region_masks: target contains non-finite values");
  RegionMasks m;
  m.height = input.height;
  m.width = input.width;
  const std::size_t n = input.size();
  m.src.assign(n, 0);
  m.field.assign(n, 0);
  m.ring1.assign(n, 0);
  m.ring2.assign(n, 0);
  m.ring3.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_src = input.values[i] > 0.0;
    m.src[i] = is_src;
    m.field[i] = !is_src;
    const double y = target.values[i];
    m.ring1[i] = y >= RegionMasks::ring1_lo && y <= RegionMasks::ring1_hi;
    m.ring2[i] = y >= RegionMasks::ring2_lo && y < RegionMasks::ring1_lo;
    m.ring3[i] = y >= RegionMasks::ring3_lo && y < RegionMasks::ring2_lo;
  }
  return m;
}

}  // namespace dsal
