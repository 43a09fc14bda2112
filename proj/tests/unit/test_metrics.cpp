#include <gtest/gtest.h>

#include <random>

#include "support/oracle.hpp"
#include "vrga/metrics.hpp"
#include "vrga/metrics_io.hpp"
#include "vrga/synthgen.hpp"

using namespace vrga;

namespace {

struct Case {
  TokenLayout layout;
  std::vector<double> row;
  RegionMask region;
  oracle::Row ref;
};

Case random_case(std::mt19937_64& rng) {
  const std::size_t m = 8 + rng() % 505;
  const std::size_t n = std::min<std::size_t>(4 + rng() % 253, m - 1);
  const std::size_t begin = rng() % (m - n);
  const TokenLayout layout(m, {{begin, begin + n}}, begin == 0 ? m - 1 : 0);
  std::vector<double> row(m);
  std::exponential_distribution<double> e(1.0);
  double s = 0;
  for (auto& x : row) s += (x = e(rng));
  for (auto& x : row) x /= s;
  std::vector<std::size_t> b;
  const std::size_t bn = 1 + rng() % n;
  for (std::size_t i = 0; i < bn; ++i) b.push_back(begin + rng() % n);
  auto region = make_region(layout, b);
  oracle::Row ref{row, {}, {region.token_indices.begin(), region.token_indices.end()}};
  for (std::size_t i = begin; i < begin + n; ++i) ref.visual.insert(i);
  return {layout, row, region, ref};
}

}  // namespace

TEST(Metrics, HandComputedRow) {
  const TokenLayout layout(4, {{1, 3}}, 3);
  const std::vector<double> row{0.1, 0.2, 0.3, 0.4};
  const auto region = make_region(layout, {2});
  EXPECT_NEAR(*rrar(std::span<const double>(row), layout, region), 1.2, 1e-15);
  EXPECT_NEAR(*image_attention_ratio(std::span<const double>(row), layout), 1.0, 1e-15);
  // -(0.4 ln 0.4 + 0.6 ln 0.6) = 0.6730116670, and eps lowers it by 2e-8 to first order.
  EXPECT_NEAR(*image_attention_entropy(std::span<const double>(row), layout), 0.6730116470, 1e-10);
}

TEST(Metrics, MatchesOracleOnRandomRows) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto c = random_case(rng);
    const std::span<const double> row(c.row);
    ASSERT_LE(oracle::rel(*rrar(row, c.layout, c.region), *oracle::rrar(c.ref)), 1e-6);
    ASSERT_LE(oracle::rel(*image_attention_ratio(row, c.layout), *oracle::r_img(c.ref)), 1e-6);
    ASSERT_LE(oracle::rel(*image_attention_entropy(row, c.layout), *oracle::h_img(c.ref)), 1e-6);
  }
}

TEST(Metrics, ClosedForms) {
  const std::size_t m = 50, n = 20;
  const TokenLayout layout(m, {{5, 25}}, 49);
  std::vector<double> uniform(m, 1.0 / m);
  const std::span<const double> u(uniform);
  EXPECT_EQ(*rrar(u, layout, make_region(layout, {7, 8, 9})), 1.0);
  EXPECT_NEAR(*image_attention_entropy(u, layout), -std::log(1.0 / n + 1e-8), 1e-4);

  std::vector<double> visual_only(m, 0.0);
  for (std::size_t i = 5; i < 25; ++i) visual_only[i] = 1.0 / n;
  EXPECT_NEAR(*image_attention_ratio(std::span<const double>(visual_only), layout), double(m) / n, 1e-9);

  std::vector<double> one_hot(m, 0.0);
  one_hot[10] = 1.0;
  EXPECT_LE(std::abs(*image_attention_entropy(std::span<const double>(one_hot), layout)), 1e-6);
}

TEST(Metrics, UndefinedWithoutVisualMass) {
  const TokenLayout layout(6, {{1, 3}}, 5);
  const std::vector<double> row{0.5, 0, 0, 0.25, 0.25, 0};
  const std::span<const double> r(row);
  EXPECT_FALSE(rrar(r, layout, make_region(layout, {1})).has_value());
  EXPECT_FALSE(image_attention_entropy(r, layout).has_value());
  EXPECT_EQ(*image_attention_ratio(r, layout), 0.0);
  EXPECT_FALSE(entropy_focus_ratio(std::nullopt, 1.0).has_value());
  EXPECT_FALSE(entropy_focus_ratio(1.0, 0.0).has_value());
}

TEST(Metrics, RegionErrors) {
  const TokenLayout layout(6, {{1, 3}}, 5);
  const std::vector<double> row(6, 1.0 / 6);
  EXPECT_THROW(rrar(std::span<const double>(row), layout, RegionMask{}), ValidationError);
  EXPECT_THROW(rrar(std::span<const double>(row), layout, RegionMask{{4}}), ValidationError);
  const std::vector<double> short_row(5, 0.2);
  EXPECT_THROW(image_attention_ratio(std::span<const double>(short_row), layout), ValidationError);
}

TEST(Metrics, FloatAndDoubleRowsAgree) {
  std::mt19937_64 rng(5);
  const auto c = random_case(rng);
  std::vector<float> f(c.row.begin(), c.row.end());
  const auto a = head_metrics(std::span<const double>(c.row), c.layout, &c.region);
  const auto b = head_metrics(std::span<const float>(f), c.layout, &c.region);
  EXPECT_NEAR(*a.rrar, *b.rrar, 1e-5 * *a.rrar);
  EXPECT_NEAR(*a.efr, *b.efr, 1e-5 * *a.efr);
}

TEST(Metrics, LayerRrarSkipsUndefinedHeads) {
  const TokenLayout layout(6, {{1, 3}}, 5);
  std::vector<float> data{
      0.2f, 0.3f, 0.1f, 0.2f, 0.1f, 0.1f,  // layer 0 head 0
      0.5f, 0.0f, 0.0f, 0.2f, 0.2f, 0.1f,  // layer 0 head 1: no visual mass
  };
  const AttentionDump d(DumpKind::kQtSlice, 1, 2, 1, layout, data);
  const auto lr = layer_rrar(d, make_region(layout, {1}));
  EXPECT_NEAR(lr.mean[0], 1.5, 1e-6);
  EXPECT_EQ(lr.skipped[0], 1u);
  EXPECT_THROW(layer_rrar(d, RegionMask{}), ValidationError);
}

TEST(Metrics, PerStepDefaultsToLastStep) {
  const TokenLayout layout(4, {{1, 3}}, 3);
  std::vector<float> data{0.25f, 0.25f, 0.25f, 0.25f, 0.1f, 0.6f, 0.2f, 0.1f};
  const AttentionDump d(DumpKind::kPerStep, 1, 1, 2, layout, data);
  const auto region = make_region(layout, {1});
  EXPECT_NEAR(*compute_head_metrics(d, &region).at(0, 0).rrar, 0.6 / 0.4, 1e-6);
  EXPECT_NEAR(*compute_head_metrics(d, &region, {}, 0).at(0, 0).rrar, 1.0, 1e-6);
}

TEST(Regression, CollinearPairsAreExact) {
  std::vector<RhPoint> pts;
  std::vector<double> x, y;
  for (int i = 0; i < 40; ++i) {
    const double h = 0.5 + 0.1 * i;
    pts.push_back({h, 0.37 * h + 0.11});
    x.push_back(h);
    y.push_back(0.37 * h + 0.11);
  }
  const auto fit = fit_r_h_regression(pts);
  ASSERT_TRUE(fit);
  EXPECT_NEAR(fit->slope, 0.37, 1e-9);
  EXPECT_NEAR(fit->intercept, 0.11, 1e-9);
  EXPECT_DOUBLE_EQ(fit->pearson, 1.0);
  const auto ref = oracle::ols(x, y);
  EXPECT_NEAR(fit->slope, static_cast<double>(ref.slope), 1e-12);
}

TEST(Regression, NoisyPointsMatchOracle) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0, 0.3);
  std::vector<RhPoint> pts;
  std::vector<double> x, y;
  for (int i = 0; i < 32; ++i) {
    const double h = 1.0 + 0.05 * i;
    const double r = -0.8 * h + 3.0 + nd(rng);
    pts.push_back({h, r});
    x.push_back(h);
    y.push_back(r);
  }
  const auto fit = *fit_r_h_regression(pts);
  const auto ref = oracle::ols(x, y);
  EXPECT_LE(oracle::rel(fit.slope, ref.slope), 1e-9);
  EXPECT_LE(oracle::rel(fit.intercept, ref.intercept), 1e-9);
  EXPECT_LE(oracle::rel(fit.pearson, ref.r), 1e-9);
}

TEST(Regression, Degenerate) {
  std::vector<RhPoint> two{{1, 1}, {2, 2}};
  EXPECT_THROW(fit_r_h_regression(two), ValidationError);
  std::vector<RhPoint> flat{{1, 1}, {1, 2}, {1, 3}};
  EXPECT_FALSE(fit_r_h_regression(flat).has_value());
}

TEST(Regression, AggregateUsesSampleStd) {
  std::vector<std::optional<RegressionFit>> fits{RegressionFit{1.0, 0.0, 0.9, 3}, std::nullopt,
                                                 RegressionFit{3.0, 2.0, 0.95, 3}};
  const auto agg = aggregate_regression(fits);
  EXPECT_EQ(agg.samples, 2u);
  EXPECT_EQ(agg.undefined, 1u);
  EXPECT_DOUBLE_EQ(agg.slope.mean, 2.0);
  EXPECT_NEAR(agg.slope.stddev, std::sqrt(2.0), 1e-15);
}

TEST(Score, Comprehensive) {
  EXPECT_DOUBLE_EQ(comprehensive_score({1, 0.25, 1.0}), 0.75);
  EXPECT_DOUBLE_EQ(comprehensive_score({0, 0.25, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(comprehensive_score({1, 0.5, 0.5}), 0.75);
  EXPECT_THROW(comprehensive_score({2, 0.0, 1.0}), ValidationError);
  EXPECT_THROW(comprehensive_score({1, 1.5, 1.0}), ValidationError);
}

TEST(Modes, OrderingOnPlantedConcentration) {
  std::vector<SynthSample> keep;
  std::vector<ModeSample> samples;
  keep.reserve(6);
  for (auto mode : {PromptMode::kReason, PromptMode::kDirect, PromptMode::kRegionGuided}) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      auto spec = default_fixture_spec(seed);
      spec.mode = mode;
      spec.mode_offsets = {{PromptMode::kReason, 0.6}, {PromptMode::kDirect, 0.8}, {PromptMode::kRegionGuided, 1.0}};
      keep.push_back(generate(spec));
    }
  }
  std::size_t i = 0;
  for (auto mode : {PromptMode::kReason, PromptMode::kDirect, PromptMode::kRegionGuided}) {
    for (int s = 0; s < 2; ++s, ++i) {
      samples.push_back({mode, &keep[i].dump, make_region(keep[i].dump.layout(), keep[i].labels.region)});
    }
  }
  const auto rep = compare_modes(samples);
  ASSERT_EQ(rep.modes.size(), 3u);
  EXPECT_TRUE(rep.ordering_holds);
  EXPECT_THROW(compare_modes(std::span<const ModeSample>(samples.data(), 2)), ValidationError);
}

TEST(MetricsIo, CsvColumnsAndFormat) {
  const TokenLayout layout(4, {{1, 3}}, 3);
  const AttentionDump d(DumpKind::kQtSlice, 1, 1, 1, layout, {0.1f, 0.2f, 0.3f, 0.4f});
  const auto region = make_region(layout, {2});
  const auto with = metrics_to_csv(compute_head_metrics(d, &region), true);
  const auto without = metrics_to_csv(compute_head_metrics(d), false);
  EXPECT_EQ(with.substr(0, with.find('\n')), "layer,head,rrar,r_img,h_img,efr");
  EXPECT_EQ(without.substr(0, without.find('\n')), "layer,head,r_img,h_img,efr");
  oracle::Row ref{{0.1f, 0.2f, 0.3f, 0.4f}, {1, 2}, {2}};
  const auto r = static_cast<double>(*oracle::r_img(ref));
  const auto h = static_cast<double>(*oracle::h_img(ref));
  const auto line = "0,0," + format_g9(static_cast<double>(*oracle::rrar(ref))) + "," + format_g9(r) + "," +
                    format_g9(h) + "," + format_g9(h / r) + "\n";
  EXPECT_EQ(with.substr(with.find('\n') + 1), line);
}
