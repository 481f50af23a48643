#include <gtest/gtest.h>

#include "support.hpp"

using namespace dsal;

TEST(ScenarioParams, DistanceIsDerived) {
  ScenarioParams p{10, 10, 16, 18, 1.0, 0.5};
  EXPECT_DOUBLE_EQ(p.d(), 10.0);
  p.cx2 = 22;
  EXPECT_DOUBLE_EQ(p.d(), std::hypot(12.0, 8.0));
}

TEST(ScenarioParams, ValidationRejectsBadValues) {
  ScenarioParams ok{8, 8, 20, 20, 1.0, 0.3};
  EXPECT_NO_THROW(ok.validate(32));
  auto bad = ok;
  bad.cx1 = 4.9;
  EXPECT_THROW(bad.validate(32), ConfigError);
  bad = ok;
  bad.cy2 = 26.1;
  EXPECT_THROW(bad.validate(32), ConfigError);
  bad = ok;
  bad.q1 = 0.9;
  EXPECT_THROW(bad.validate(32), ConfigError);
  bad = ok;
  bad.q2 = 1.01;
  EXPECT_THROW(bad.validate(32), ConfigError);
  bad = ok;
  bad.cx2 = 12;
  bad.cy2 = 10;  // d < 10
  EXPECT_THROW(bad.validate(32), ConfigError);
  EXPECT_NO_THROW(bad.validate(32, true));
}

TEST(Identifier, SixComponents) {
  ScenarioParams p{5, 6, 17, 11, 1.0, 0.25};
  const auto id = identifier(p);
  ASSERT_EQ(id.size(), 6u);
  EXPECT_EQ(id[0], 5);
  EXPECT_EQ(id[3], 11);
  EXPECT_DOUBLE_EQ(id[4], 13.0);
  EXPECT_EQ(id[5], 0.25);
}

TEST(PhysicsConfig, DiffusionLength) {
  PhysicsConfig p;
  EXPECT_DOUBLE_EQ(p.diffusion_length(), 20.0);
  EXPECT_THROW((PhysicsConfig{0.0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((PhysicsConfig{1.0, -1.0}.validate()), ConfigError);
}

TEST(RenderInput, ZeroIntensitySourceIsInvisible) {
  const auto p = test::isolated_source(20.0, 20.0);
  const auto g = render_input(p, 32);
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      const bool inside = (i - 20.0) * (i - 20.0) + (j - 20.0) * (j - 20.0) <= 25.0;
      EXPECT_EQ(g.at(i, j), inside ? 1.0 : 0.0);
    }
  }
}

TEST(RenderInput, IntegerCenterDiskHas81Pixels) {
  ScenarioParams p{10, 10, 21, 21, 1.0, 0.5};
  const auto g = render_input(p, 32);
  std::size_t n1 = 0, n2 = 0;
  for (double v : g.values) {
    n1 += v == 1.0;
    n2 += v == 0.5;
  }
  EXPECT_EQ(n1, 81u);
  EXPECT_EQ(n2, 81u);
}

TEST(RenderInput, SourcesCoverAboutTwoPercentOf100Lattice) {
  Rng rng(3);
  double total = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    auto p = sample_scenario(rng, 100);
    p.q2 = 0.5;
    const auto g = render_input(p, 100);
    total += static_cast<double>(std::count_if(g.values.begin(), g.values.end(), [](double v) { return v > 0; }));
  }
  const double mean = total / trials;
  EXPECT_NEAR(mean, 158.0, 5.0);
  EXPECT_NEAR(mean / 1e4, 0.016, 0.002);
}

TEST(RenderInput, MirrorEquivariance) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto p = sample_scenario(rng, 32);
    auto m = p;
    m.cx1 = 31.0 - p.cx1;
    m.cx2 = 31.0 - p.cx2;
    EXPECT_EQ(render_input(m, 32), test::mirror_lr(render_input(p, 32)));
  }
}

TEST(RenderInput, RotationEquivariance) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const auto p = sample_scenario(rng, 32);
    ScenarioParams r = p;
    r.cx1 = p.cy1;
    r.cy1 = 31.0 - p.cx1;
    r.cx2 = p.cy2;
    r.cy2 = 31.0 - p.cx2;
    EXPECT_EQ(render_input(r, 32), test::rotate90(render_input(p, 32)));
  }
}

TEST(RenderInput, OverlapTakesMaximum) {
  ScenarioParams p{12, 12, 15, 12, 1.0, 0.4};
  EXPECT_THROW(render_input(p, 32), ConfigError);
  const auto g = render_input(p, 32, true);
  EXPECT_EQ(g.at(12, 14), 1.0);
  EXPECT_EQ(g.at(12, 19), 0.4);
}

TEST(RenderInput, RejectsTinyLattice) {
  ScenarioParams p{5, 5, 5, 5, 1.0, 0.0};
  EXPECT_THROW(render_input(p, 11, true), ConfigError);
}

TEST(RegionMasks, RingMembershipAtBoundaries) {
  FieldGrid in(1, 7), tg(1, 7);
  const double vals[] = {0.15, 0.2, 0.1, 0.05, 1.0, 0.049, 0.0};
  for (int j = 0; j < 7; ++j) tg.at(0, j) = vals[j];
  const auto m = compute_region_masks(in, tg);
  // 0.15 -> ring2 only
  EXPECT_EQ(m.ring1[0], 0);
  EXPECT_EQ(m.ring2[0], 1);
  EXPECT_EQ(m.ring3[0], 0);
  EXPECT_EQ(m.ring1[1], 1);
  EXPECT_EQ(m.ring2[2], 1);
  EXPECT_EQ(m.ring3[3], 1);
  EXPECT_EQ(m.ring1[4], 1);
  EXPECT_EQ(m.ring1[5] + m.ring2[5] + m.ring3[5], 0);
  EXPECT_EQ(m.ring1[6] + m.ring2[6] + m.ring3[6], 0);
}

TEST(RegionMasks, RingsPartitionTheBand) {
  Rng rng(9);
  FieldGrid in(20, 20), tg(20, 20);
  for (auto& v : tg.values) v = rng.uniform01();
  const auto m = compute_region_masks(in, tg);
  for (std::size_t i = 0; i < tg.size(); ++i) {
    const int c = m.ring1[i] + m.ring2[i] + m.ring3[i];
    EXPECT_EQ(c, tg.values[i] >= 0.05 ? 1 : 0);
  }
}

TEST(RegionMasks, EmptyCases) {
  FieldGrid in(8, 8), tg(8, 8);
  auto m = compute_region_masks(in, tg);
  EXPECT_EQ(count(m.ring1) + count(m.ring2) + count(m.ring3), 0u);
  EXPECT_EQ(count(m.src), 0u);
  EXPECT_EQ(count(m.field), 64u);
}

TEST(RegionMasks, SrcAndFieldAreComplements) {
  ScenarioParams p{8, 8, 22, 20, 1.0, 0.7};
  const auto in = render_input(p, 32);
  const auto m = compute_region_masks(in, in);
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(m.src[i] + m.field[i], 1);
  EXPECT_EQ(count(m.src), 162u);
}

TEST(RegionMasks, ShapeAndFiniteness) {
  FieldGrid a(4, 4), b(4, 5);
  EXPECT_THROW(compute_region_masks(a, b), ShapeError);
  FieldGrid c(4, 4);
  c.values[3] = std::nan("");
  EXPECT_THROW(compute_region_masks(a, c), ConfigError);
}

TEST(Rng, DeriveSeedIsOrderSensitiveAndStable) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {0}), derive_seed(2, {0}));
  // SplitMix64 reference value for input 0
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(Rng, UniformIndexStaysInRange) {
  Rng r(4);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(r.uniform_index(7), 7u);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform01();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
