#include <gtest/gtest.h>

#include "support.hpp"

using namespace dsal;

namespace {

MetricsRow row(const char* arch, const char* strat, std::uint64_t seed, std::size_t count, double v) {
  MetricsRow r;
  r.arch = arch;
  r.strategy = strat;
  r.seed = seed;
  r.labeled_count = count;
  r.labeled_frac = static_cast<double>(count) / 100.0;
  r.metric[0] = v;
  return r;
}

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Curves, MeanOverSeeds) {
  const std::vector<MetricsRow> rows{row("unet", "tod", 1, 10, 0.2), row("unet", "tod", 2, 10, 0.4),
                                     row("unet", "tod", 1, 20, 0.1), row("unet", "tod", 2, 20, 0.3),
                                     row("unet", "random", 1, 10, 0.5)};
  const auto cr = report::build_series(rows, "wmae_all");
  ASSERT_EQ(cr.series.size(), 2u);
  EXPECT_EQ(cr.series[0].label, "random");
  EXPECT_EQ(cr.series[1].label, "tod");
  EXPECT_EQ(cr.series[1].x, (std::vector<double>{0.1, 0.2}));
  EXPECT_NEAR(cr.series[1].y[0], 0.3, 1e-15);
  EXPECT_NEAR(cr.series[1].y[1], 0.2, 1e-15);
  EXPECT_TRUE(cr.warnings.empty());
}

TEST(Curves, ArchPrefixAndMissingRounds) {
  const std::vector<MetricsRow> rows{row("unet", "tod", 1, 10, 0.2), row("unet", "tod", 1, 20, 0.1),
                                     row("unet", "tod", 2, 10, 0.4), row("cnn_autoencoder", "tod", 1, 10, 0.9)};
  const auto cr = report::build_series(rows, "wmae_all");
  ASSERT_EQ(cr.series.size(), 2u);
  EXPECT_EQ(cr.series[0].label, "cnn_autoencoder tod");
  EXPECT_EQ(cr.series[1].x.size(), 1u);
  EXPECT_EQ(cr.warnings.size(), 1u);
  // a metric that is absent everywhere produces no series
  EXPECT_TRUE(report::build_series(rows, "mae_src").series.empty());
}

TEST(Curves, SvgHasOneLinePerSeries) {
  const std::vector<MetricsRow> rows{row("unet", "tod", 1, 10, 0.2), row("unet", "tod", 1, 20, 0.1),
                                     row("unet", "random", 1, 10, 0.3), row("unet", "random", 1, 20, 0.25)};
  const auto svg = report::learning_curve_svg(report::build_series(rows, "wmae_all"), "wmae_all");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(count_of(svg, "<polyline"), 2u);
  EXPECT_NE(svg.find(">tod<"), std::string::npos);
  EXPECT_NO_THROW(report::learning_curve_svg(report::CurveResult{}, "wmae_all"));
}

TEST(ErrorMaps, PanelsAndMetadata) {
  FieldGrid in(4, 5), tg(4, 5, 0.5), pr(4, 5, 0.55);
  const auto svg = report::error_map_svg(in, tg, pr, Arch::unet, report::default_error_range(Arch::unet), "sample 7 <r2>");
  EXPECT_EQ(count_of(svg, "fill=\"#"), 4u * 20u + 4u * 32u);
  EXPECT_NE(svg.find("sample 7 &lt;r2&gt;; arch=unet; error_range=[0,0.1]"), std::string::npos);
  EXPECT_THROW(report::error_map_svg(in, FieldGrid(3, 3), pr, Arch::unet, 0.1, ""), ShapeError);
  const auto e = report::abs_error(pr, tg);
  EXPECT_NEAR(e.values[3], 0.05, 1e-15);
  EXPECT_GT(report::default_error_range(Arch::cnn_autoencoder), report::default_error_range(Arch::unet));
}

TEST(ErrorMaps, ColormapEndsAndClamps) {
  EXPECT_EQ(report::colormap(0.0), report::colormap(-3.0));
  EXPECT_EQ(report::colormap(1.0), report::colormap(7.0));
  EXPECT_NE(report::colormap(0.0), report::colormap(1.0));
  EXPECT_EQ(report::colormap(0.5).size(), 7u);
}

TEST(Histograms, CountsAndLayout) {
  const std::vector<double> v{0.0, 0.05, 0.5, 0.99, 1.0, 2.0};
  const auto h = report::histogram("q2", v, 0.0, 1.0, 4);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 0, 1, 3}));
  const report::Histogram hs[] = {h};
  const auto csv = report::histograms_csv(hs);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variable,bin_lo,bin_hi,count");
  EXPECT_EQ(io::split(csv, '\n').size(), 6u);
  EXPECT_NE(report::histograms_text(hs).find("########################################"), std::string::npos);
}

TEST(Histograms, DatasetParameters) {
  const auto ds = test::small_dataset(30, 32, SplitCounts{20, 5, 5}, 4);
  const auto hs = report::parameter_histograms(ds, 5);
  ASSERT_EQ(hs.size(), 4u);
  auto total = [](const report::Histogram& h) { return std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}); };
  EXPECT_EQ(total(hs[0]), 30u);
  EXPECT_EQ(total(hs[1]), 30u);
  EXPECT_EQ(total(hs[2]), 60u);
  EXPECT_EQ(hs[2].lo, 5.0);
  EXPECT_EQ(hs[2].hi, 26.0);
}
