#pragma once

// Stationary diffusion-with-decay on the lattice:
//   D * lap(u) - gamma * u (+ S) = 0 on interior unknowns, u = 0 on the outer
//   pixel ring (absorbing boundary), 5-point Laplacian with unit spacing.
// In fixed-value mode source pixels are held at their intensity and removed
// from the unknown set; in flux mode the rendered input is a volume source.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cassert>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "dsal/core_types.hpp"
#include "dsal/error.hpp"

namespace dsal {

enum class SourceMode { fixed_value, flux };
enum class SolveMethod { conjugate_gradient, direct_sparse };

inline const char* to_string(SourceMode m) { return m == SourceMode::fixed_value ? "fixed" : "flux"; }
inline const char* to_string(SolveMethod m) { return m == SolveMethod::conjugate_gradient ? "cg" : "direct"; }

inline SourceMode parse_source_mode(const std::string& s) {
  if (s == "fixed" || s == "fixed-value") return SourceMode::fixed_value;
  if (s == "flux") return SourceMode::flux;
  throw ConfigError("unknown source mode '" + s + "'");
}
inline SolveMethod parse_solve_method(const std::string& s) {
  if (s == "cg" || s == "conjugate-gradient") return SolveMethod::conjugate_gradient;
  if (s == "direct" || s == "direct-sparse") return SolveMethod::direct_sparse;
  throw ConfigError("unknown solve method '" + s + "'");
}

struct SolverConfig {
  SourceMode mode = SourceMode::fixed_value;
  double tolerance = 1e-10;
  std::size_t max_iterations = 20000;
  SolveMethod method = SolveMethod::conjugate_gradient;

  void validate() const {
    if (!(tolerance > 0.0)) throw ConfigError("SolverConfig: tolerance must be positive");
    if (max_iterations < 1) throw ConfigError("SolverConfig: max_iterations must be >= 1");
  }
  bool operator==(const SolverConfig&) const = default;
};

struct SolveResult {
  FieldGrid field;
  double residual = 0.0;  ///< ||b - A u||_2 / ||b||_2 over the unknowns
  std::size_t iterations = 0;
};

namespace detail {

/// Linear system over the unknown pixels, stored matrix-free.
struct LatticeSystem {
  int size = 0;
  double D = 1.0;
  double diag = 0.0;
  std::vector<int> unknown_of;   // pixel -> unknown index, -1 when fixed
  std::vector<int> pixel_of;     // unknown -> pixel
  std::vector<double> fixed;     // pixel values of non-unknown pixels
  std::vector<double> rhs;

  std::size_t n() const { return pixel_of.size(); }

  template <class In, class Out>
  void apply(const In& x, Out& y) const {
    const std::size_t m = n();
    for (std::size_t k = 0; k < m; ++k) {
      const int p = pixel_of[k];
      double acc = diag * x[k];
      for (int q : {p - 1, p + 1, p - size, p + size}) {
        const int u = unknown_of[static_cast<std::size_t>(q)];
        if (u >= 0) acc -= D * x[static_cast<std::size_t>(u)];
      }
      y[k] = acc;
    }
  }
};

inline LatticeSystem assemble(const FieldGrid& input, const PhysicsConfig& phys, SourceMode mode) {
  LatticeSystem s;
  const int n = input.height;
  s.size = n;
  s.D = phys.D;
  s.diag = 4.0 * phys.D + phys.gamma;
  const std::size_t total = input.size();
  s.unknown_of.assign(total, -1);
  s.fixed.assign(total, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t p = input.index(i, j);
      const bool boundary = i == 0 || j == 0 || i == n - 1 || j == n - 1;
      const bool source = input.values[p] > 0.0;
      if (mode == SourceMode::fixed_value && source) {
        s.fixed[p] = input.values[p];
      } else if (!boundary) {
        s.unknown_of[p] = static_cast<int>(s.pixel_of.size());
        s.pixel_of.push_back(static_cast<int>(p));
      }
    }
  }
  s.rhs.assign(s.n(), 0.0);
  for (std::size_t k = 0; k < s.n(); ++k) {
    const int p = s.pixel_of[k];
    double b = mode == SourceMode::flux ? input.values[static_cast<std::size_t>(p)] : 0.0;
    for (int q : {p - 1, p + 1, p - n, p + n}) {
      if (s.unknown_of[static_cast<std::size_t>(q)] < 0) b += phys.D * s.fixed[static_cast<std::size_t>(q)];
    }
    s.rhs[k] = b;
  }
  return s;
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double relative_residual(const LatticeSystem& s, const std::vector<double>& x) {
  std::vector<double> ax(s.n());
  s.apply(x, ax);
  double num = 0.0;
  for (std::size_t k = 0; k < s.n(); ++k) num += (s.rhs[k] - ax[k]) * (s.rhs[k] - ax[k]);
  const double den = norm2(s.rhs);
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num) / den;
}

inline FieldGrid scatter(const LatticeSystem& s, const std::vector<double>& x) {
  FieldGrid g(s.size, s.size);
  g.values = s.fixed;
  for (std::size_t k = 0; k < s.n(); ++k) g.values[static_cast<std::size_t>(s.pixel_of[k])] = x[k];
  return g;
}

/// Jacobi-preconditioned conjugate gradient.
inline std::vector<double> solve_cg(const LatticeSystem& s, const SolverConfig& cfg, std::size_t& iters) {
  const std::size_t m = s.n();
  std::vector<double> x(m, 0.0), r = s.rhs, z(m), p(m), ap(m);
  const double bnorm = norm2(s.rhs);
  iters = 0;
  if (bnorm == 0.0) return x;
  const double inv_diag = 1.0 / s.diag;
  for (std::size_t k = 0; k < m; ++k) z[k] = r[k] * inv_diag;
  p = z;
  double rz = 0.0;
  for (std::size_t k = 0; k < m; ++k) rz += r[k] * z[k];
  while (iters < cfg.max_iterations) {
    s.apply(p, ap);
    double pap = 0.0;
    for (std::size_t k = 0; k < m; ++k) pap += p[k] * ap[k];
    assert(pap > 0.0 && "system must be positive definite");
    const double alpha = rz / pap;
    double rr = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      x[k] += alpha * p[k];
      r[k] -= alpha * ap[k];
      rr += r[k] * r[k];
    }
    ++iters;
    if (std::sqrt(rr) <= cfg.tolerance * bnorm) {
      // Recursive residual can drift from the true one; confirm.
      if (relative_residual(s, x) <= cfg.tolerance) break;
    }
    double rz_new = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      z[k] = r[k] * inv_diag;
      rz_new += r[k] * z[k];
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t k = 0; k < m; ++k) p[k] = z[k] + beta * p[k];
  }
  return x;
}

inline std::vector<double> solve_direct(const LatticeSystem& s) {
  const auto m = static_cast<Eigen::Index>(s.n());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(s.n() * 5);
  for (std::size_t k = 0; k < s.n(); ++k) {
    const int p = s.pixel_of[k];
    trips.emplace_back(static_cast<int>(k), static_cast<int>(k), s.diag);
    for (int q : {p - 1, p + 1, p - s.size, p + s.size}) {
      const int u = s.unknown_of[static_cast<std::size_t>(q)];
      if (u >= 0) trips.emplace_back(static_cast<int>(k), u, -s.D);
    }
  }
  Eigen::SparseMatrix<double> a(m, m);
  a.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
  assert(ldlt.info() == Eigen::Success && "gamma > 0 makes the system nonsingular");
  Eigen::Map<const Eigen::VectorXd> b(s.rhs.data(), m);
  Eigen::VectorXd x = ldlt.solve(b);
  return {x.data(), x.data() + x.size()};
}

}  // namespace detail

/// Solves the stationary problem for an already rendered source layout.
inline SolveResult solve_steady_state(const FieldGrid& input, const PhysicsConfig& phys, const SolverConfig& cfg) {
  phys.validate();
  cfg.validate();
  if (input.height != input.width || input.height < 3) throw ConfigError("solve_steady_state: lattice must be square and at least 3x3");
  const auto sys = detail::assemble(input, phys, cfg.mode);
  SolveResult out;
  std::vector<double> x;
  if (cfg.method == SolveMethod::direct_sparse) {
    x = detail::solve_direct(sys);
    out.iterations = 1;
  } else {
    x = detail::solve_cg(sys, cfg, out.iterations);
  }
  out.residual = detail::relative_residual(sys, x);
  if (!(out.residual <= cfg.tolerance)) {
    std::ostringstream os;
    os << "steady-state solve did not converge: relative residual " << out.residual << " after " << out.iterations
       << " iterations (tolerance " << cfg.tolerance << ")";
    throw SolverError(os.str(), out.residual, out.iterations);
  }
  out.field = detail::scatter(sys, x);
  return out;
}

inline SolveResult solve_steady_state(const ScenarioParams& params, const PhysicsConfig& phys, const SolverConfig& cfg,
                                      int size, bool allow_overlap = false) {
  return solve_steady_state(render_input(params, size, allow_overlap), phys, cfg);
}

/// Relative residual of an arbitrary full-lattice field against the system
/// induced by `input` (boundary and fixed pixels are taken from the system).
inline double steady_state_residual(const FieldGrid& input, const FieldGrid& u, const PhysicsConfig& phys, SourceMode mode) {
  require_same_shape(input, u, "steady_state_residual");
  const auto sys = detail::assemble(input, phys, mode);
  std::vector<double> x(sys.n());
  for (std::size_t k = 0; k < sys.n(); ++k) x[k] = u.values[static_cast<std::size_t>(sys.pixel_of[k])];
  return detail::relative_residual(sys, x);
}

/// Largest pointwise |D lap(u) - gamma u (+ S)| over the unknown pixels.
inline double steady_state_residual_max(const FieldGrid& input, const FieldGrid& u, const PhysicsConfig& phys, SourceMode mode) {
  require_same_shape(input, u, "steady_state_residual_max");
  const auto sys = detail::assemble(input, phys, mode);
  std::vector<double> x(sys.n()), ax(sys.n());
  for (std::size_t k = 0; k < sys.n(); ++k) x[k] = u.values[static_cast<std::size_t>(sys.pixel_of[k])];
  sys.apply(x, ax);
  double worst = 0.0;
  for (std::size_t k = 0; k < sys.n(); ++k) worst = std::max(worst, std::abs(sys.rhs[k] - ax[k]));
  return worst;
}

/// Explicit-Euler relaxation of du/dt = D lap(u) - gamma u (+ S) until
/// successive iterates differ by less than `stop_tol` in the max norm.
/// Independent of the linear solvers above; used to validate them.
inline FieldGrid time_step_oracle(const FieldGrid& input, const PhysicsConfig& phys, SourceMode mode, double dt,
                                  double stop_tol, std::size_t max_steps = 50'000'000) {
  phys.validate();
  if (!(dt > 0.0) || !(dt < 1.0 / (4.0 * phys.D + phys.gamma))) {
    throw ConfigError("time_step_oracle: dt violates the explicit stability bound dt < 1/(4D + gamma)");
  }
  if (!(stop_tol > 0.0)) throw ConfigError("time_step_oracle: stop_tol must be positive");
  const int n = input.height;
  FieldGrid u(n, n), next(n, n);
  std::vector<std::uint8_t> held(input.size(), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t p = input.index(i, j);
      const bool boundary = i == 0 || j == 0 || i == n - 1 || j == n - 1;
      if (mode == SourceMode::fixed_value && input.values[p] > 0.0) {
        held[p] = 1;
        u.values[p] = input.values[p];
      } else if (boundary) {
        held[p] = 1;
      }
    }
  }
  next = u;
  for (std::size_t step = 0; step < max_steps; ++step) {
    double change = 0.0;
    for (int i = 1; i < n - 1; ++i) {
      for (int j = 1; j < n - 1; ++j) {
        const std::size_t p = u.index(i, j);
        if (held[p]) continue;
        const double lap = u.values[p - 1] + u.values[p + 1] + u.values[p - static_cast<std::size_t>(n)] +
                           u.values[p + static_cast<std::size_t>(n)] - 4.0 * u.values[p];
        double rate = phys.D * lap - phys.gamma * u.values[p];
        if (mode == SourceMode::flux) rate += input.values[p];
        next.values[p] = u.values[p] + dt * rate;
        change = std::max(change, std::abs(dt * rate));
      }
    }
    std::swap(u.values, next.values);
    if (change < stop_tol) return u;
  }
  throw SolverError("time_step_oracle: no convergence within max_steps", 0.0, max_steps);
}

inline FieldGrid time_step_oracle(const ScenarioParams& params, const PhysicsConfig& phys, SourceMode mode, int size, double dt,
                                  double stop_tol) {
  return time_step_oracle(render_input(params, size, true), phys, mode, dt, stop_tol);
}

}  // namespace dsal
