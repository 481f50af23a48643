#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace dsal;

namespace {

SolverConfig cfg(SourceMode mode = SourceMode::fixed_value, SolveMethod m = SolveMethod::conjugate_gradient) {
  SolverConfig c;
  c.mode = mode;
  c.method = m;
  return c;
}

}  // namespace

TEST(Solver, ZeroIntensityGivesZeroField) {
  FieldGrid in(32, 32);
  for (auto mode : {SourceMode::fixed_value, SourceMode::flux}) {
    const auto r = solve_steady_state(in, PhysicsConfig{}, cfg(mode));
    for (double v : r.field.values) EXPECT_EQ(v, 0.0);
    const auto o = time_step_oracle(in, PhysicsConfig{}, mode, 0.2, 1e-12);
    for (double v : o.values) EXPECT_EQ(v, 0.0);
  }
}

TEST(Solver, CenteredSourceRotationInvariant) {
  const auto p = test::isolated_source(16.0, 16.0);
  // corner source has q = 0, so only the centered disk is rendered
  const auto in = render_input(p, 33);
  for (auto m : {SolveMethod::conjugate_gradient, SolveMethod::direct_sparse}) {
    const auto u = solve_steady_state(in, PhysicsConfig{}, cfg(SourceMode::fixed_value, m)).field;
    const auto rot = test::rotate90(u);
    EXPECT_LE(test::max_abs_diff(u, rot), 1e-10);
    EXPECT_LE(test::max_abs_diff(u, test::mirror_lr(u)), 1e-10);
  }
}

TEST(Solver, FixedValuePostConditions) {
  Rng rng(21);
  const auto p = sample_scenario(rng, 32);
  const auto in = render_input(p, 32);
  const auto r = solve_steady_state(in, PhysicsConfig{}, cfg());
  EXPECT_LE(r.residual, 1e-10);
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      if (in.at(i, j) > 0) {
        EXPECT_EQ(r.field.at(i, j), in.at(i, j));
      } else if (i == 0 || j == 0 || i == 31 || j == 31) {
        EXPECT_EQ(r.field.at(i, j), 0.0);
      }
    }
  }
  EXPECT_LE(steady_state_residual_max(in, r.field, PhysicsConfig{}, SourceMode::fixed_value), 1e-9);
}

TEST(Solver, MatchesTimeSteppingOracle32) {
  Rng rng(22);
  for (int t = 0; t < 3; ++t) {
    const auto p = sample_scenario(rng, 32);
    const auto in = render_input(p, 32);
    const auto u = solve_steady_state(in, PhysicsConfig{}, cfg()).field;
    const auto o = time_step_oracle(in, PhysicsConfig{}, SourceMode::fixed_value, 0.24, 1e-12);
    EXPECT_LE(test::max_abs_diff(u, o), 1e-4);
  }
}

TEST(Solver, OracleIsAFixedPoint) {
  Rng rng(23);
  const auto in = render_input(sample_scenario(rng, 24), 24);
  const double tol = 1e-11;
  const auto o = time_step_oracle(in, PhysicsConfig{}, SourceMode::fixed_value, 0.24, tol);
  EXPECT_LE(steady_state_residual(in, o, PhysicsConfig{}, SourceMode::fixed_value), 10 * tol);
}

TEST(Solver, Oracle16AgreesWithDirectAndDense) {
  ScenarioParams p = test::isolated_source(7.5, 8.0);
  p.cx2 = 5.0;
  p.cy2 = 10.0;
  const auto in = render_input(p, 16, true);
  const auto direct = solve_steady_state(in, PhysicsConfig{}, cfg(SourceMode::fixed_value, SolveMethod::direct_sparse)).field;
  const auto o = time_step_oracle(in, PhysicsConfig{}, SourceMode::fixed_value, 0.24, 1e-12);
  EXPECT_LE(test::max_abs_diff(direct, o), 1e-4);
  const auto dense = oracle::dense_steady_state(in, 1.0, 1.0 / 400.0);
  EXPECT_LE(test::max_abs_diff(direct, dense), 1e-10);
}

TEST(Solver, CgAndDirectAgree) {
  Rng rng(24);
  for (int t = 0; t < 3; ++t) {
    const auto in = render_input(sample_scenario(rng, 32), 32);
    for (auto mode : {SourceMode::fixed_value, SourceMode::flux}) {
      const auto a = solve_steady_state(in, PhysicsConfig{}, cfg(mode)).field;
      const auto b = solve_steady_state(in, PhysicsConfig{}, cfg(mode, SolveMethod::direct_sparse)).field;
      EXPECT_LE(test::max_abs_diff(a, b), 1e-7);
    }
  }
}

TEST(Solver, FluxModeLinearInIntensities) {
  ScenarioParams p{9.0, 10.0, 22.0, 19.5, 1.0, 0.6};
  auto in_ab = render_input(p, 32);
  FieldGrid in_a(32, 32), in_b(32, 32);
  for (std::size_t i = 0; i < in_ab.size(); ++i) {
    (in_ab.values[i] == 1.0 ? in_a : in_b).values[i] = in_ab.values[i];
  }
  auto c = cfg(SourceMode::flux);
  c.tolerance = 1e-12;
  const auto u_ab = solve_steady_state(in_ab, PhysicsConfig{}, c).field;
  const auto u_a = solve_steady_state(in_a, PhysicsConfig{}, c).field;
  const auto u_b = solve_steady_state(in_b, PhysicsConfig{}, c).field;
  double peak = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < u_ab.size(); ++i) {
    peak = std::max(peak, u_ab.values[i]);
    worst = std::max(worst, std::abs(u_ab.values[i] - u_a.values[i] - u_b.values[i]));
  }
  EXPECT_LE(worst, 1e-9 * peak);
}

TEST(Solver, MaximumPrinciple) {
  Rng rng(25);
  for (int t = 0; t < 5; ++t) {
    const auto p = sample_scenario(rng, 32);
    const auto in = render_input(p, 32);
    const auto u = solve_steady_state(in, PhysicsConfig{}, cfg()).field;
    const double qmax = std::max(p.q1, p.q2);
    for (int i = 0; i < 32; ++i) {
      for (int j = 0; j < 32; ++j) {
        const double v = u.at(i, j);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, qmax);
        const bool interior = i > 0 && j > 0 && i < 31 && j < 31;
        if (interior && in.at(i, j) == 0.0) {
          EXPECT_GT(v, 0.0);
        }
      }
    }
  }
}

TEST(Solver, MonotoneRadialDecay) {
  const auto p = test::isolated_source(10.0, 16.0);
  const auto u = solve_steady_state(p, PhysicsConfig{}, cfg(), 32).field;
  for (int j = 16; j < 31; ++j) EXPECT_GE(u.at(16, j), u.at(16, j + 1)) << "column " << j;
}

TEST(Solver, ErrorsAreReported) {
  Rng rng(26);
  const auto in = render_input(sample_scenario(rng, 32), 32);
  auto c = cfg();
  c.max_iterations = 2;
  try {
    solve_steady_state(in, PhysicsConfig{}, c);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual(), c.tolerance);
    EXPECT_EQ(e.iterations(), 2u);
  }
  EXPECT_THROW(time_step_oracle(in, PhysicsConfig{}, SourceMode::fixed_value, 0.25, 1e-8), ConfigError);
  c = cfg();
  c.tolerance = 0;
  EXPECT_THROW(solve_steady_state(in, PhysicsConfig{}, c), ConfigError);
}

TEST(Solver, ThreadCountDoesNotChangeSolution) {
  Rng rng(27);
  std::vector<FieldGrid> inputs;
  for (int i = 0; i < 4; ++i) inputs.push_back(render_input(sample_scenario(rng, 32), 32));
  std::vector<FieldGrid> serial, parallel(inputs.size());
  for (const auto& in : inputs) serial.push_back(solve_steady_state(in, PhysicsConfig{}, cfg()).field);
  std::vector<std::jthread> ts;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    ts.emplace_back([&, i] { parallel[i] = solve_steady_state(inputs[i], PhysicsConfig{}, cfg()).field; });
  ts.clear();
  for (std::size_t i = 0; i < inputs.size(); ++i) EXPECT_EQ(serial[i], parallel[i]);
}
