#include <gtest/gtest.h>

#include <random>

#include "support/oracle.hpp"
#include "support/tmpdir.hpp"
#include "vrga/steer.hpp"

using namespace vrga;

namespace {

std::vector<double> random_row(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> r(m);
  double s = 0;
  for (auto& x : r) s += (x = u(rng));
  for (auto& x : r) x /= s;
  return r;
}

}  // namespace

TEST(Steer, RatioLawAgainstOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 10 + rng() % 100;
    auto row = random_row(rng, m);
    const auto orig = row;
    std::vector<std::size_t> toks;
    for (std::size_t i = 0; i < m; ++i) {
      if (rng() % 4 == 0) toks.push_back(i);
    }
    const double gamma = static_cast<double>(rng() % 1000) / 250.0;
    RowReweighter(m, toks, gamma, true).apply(std::span<double>(row));
    const auto ref = oracle::reweight(orig, {toks.begin(), toks.end()}, gamma);
    double sum = 0;
    for (std::size_t i = 0; i < m; ++i) {
      ASSERT_LE(oracle::rel(row[i], ref[i]), 1e-12);
      sum += row[i];
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
    if (!toks.empty() && toks.size() < m) {
      const auto in = toks.front();
      std::size_t out = 0;
      while (std::count(toks.begin(), toks.end(), out)) ++out;
      const double before = orig[in] / orig[out];
      const double after = row[in] / row[out];
      ASSERT_NEAR(after / before, 1.0 + gamma, 1e-9);
    }
  }
}

TEST(Steer, Identities) {
  std::mt19937_64 rng(3);
  const auto orig = random_row(rng, 40);
  std::vector<std::size_t> all(40);
  for (std::size_t i = 0; i < 40; ++i) all[i] = i;

  auto normalized = orig;
  normalize_row(std::span<double>(normalized));

  auto g0 = orig;
  RowReweighter(40, {1, 2, 3}, 0.0, true).apply(std::span<double>(g0));
  EXPECT_EQ(g0, normalized);

  auto everything = orig;
  RowReweighter(40, all, 0.7, true).apply(std::span<double>(everything));
  EXPECT_EQ(everything, normalized);

  auto nothing = orig;
  RowReweighter(40, {}, 0.7, true).apply(std::span<double>(nothing));
  EXPECT_EQ(nothing, normalized);
}

TEST(Steer, FloatRowsStayNormalized) {
  std::mt19937_64 rng(8);
  const auto d = random_row(rng, 300);
  std::vector<float> row(d.begin(), d.end());
  RowReweighter(300, {5, 6, 7, 100}, 2.0, true).apply(std::span<float>(row));
  double s = 0;
  for (float v : row) s += v;
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(Steer, WithoutRenormalization) {
  std::vector<double> row{0.25, 0.25, 0.25, 0.25};
  RowReweighter(4, {1}, 1.0, false).apply(std::span<double>(row));
  EXPECT_EQ(row, (std::vector<double>{0.25, 0.5, 0.25, 0.25}));
}

TEST(Steer, RejectsBadInput) {
  EXPECT_THROW(RowReweighter(4, {1}, -1.0, true), ValidationError);
  EXPECT_THROW(RowReweighter(4, {4}, 0.5, true), RangeError);
  std::vector<double> short_row(3, 1.0 / 3);
  EXPECT_THROW(RowReweighter(4, {1}, 0.5, true).apply(std::span<double>(short_row)), ValidationError);
}

TEST(Mask, ZeroesSpanAndRenormalizes) {
  std::vector<double> row{0.1, 0.2, 0.3, 0.4};
  RowMasker(4, {{1, 3}}, true).apply(std::span<double>(row));
  EXPECT_DOUBLE_EQ(row[1], 0.0);
  EXPECT_DOUBLE_EQ(row[2], 0.0);
  EXPECT_NEAR(row[0], 0.2, 1e-15);
  EXPECT_NEAR(row[3], 0.8, 1e-15);

  std::vector<double> all_in{0.0, 0.5, 0.5, 0.0};
  EXPECT_THROW(RowMasker(4, {{1, 3}}, true).apply(std::span<double>(all_in)), ValidationError);
  EXPECT_THROW(RowMasker(4, {{3, 5}}, true), RangeError);
}

TEST(Plan, ValidationAgainstModel) {
  const TokenLayout layout(10, {{1, 6}}, 9);
  validate_plan(ReweightPlan{{{0, 1}}, {2, 3}, 0.5, true}, 2, 4, layout);
  EXPECT_THROW(validate_plan(ReweightPlan{{{2, 0}}, {2}, 0.5, true}, 2, 4, layout), ValidationError);
  EXPECT_THROW(validate_plan(ReweightPlan{{{0, 4}}, {2}, 0.5, true}, 2, 4, layout), ValidationError);
  EXPECT_THROW(validate_plan(ReweightPlan{{{0, 0}}, {7}, 0.5, true}, 2, 4, layout), ValidationError);
  EXPECT_THROW(validate_plan(ReweightPlan{{{0, 0}}, {2}, -1.0, true}, 2, 4, layout), ValidationError);
  EXPECT_THROW(validate_plan(MaskPlan{{{0, 0}}, {{5, 8}}, true}, 2, 4, layout), ValidationError);
}

TEST(Plan, JsonRoundTrip) {
  TempDir dir;
  const Plan rw = ReweightPlan{{{0, 1}, {3, 2}}, {4, 5, 9}, 0.25, true};
  const Plan mk = MaskPlan{{{1, 1}}, {{1, 5}, {7, 9}}, false};
  for (const auto& p : {rw, mk}) {
    save_plan(p, dir / "p.json");
    EXPECT_EQ(load_plan(dir / "p.json"), p);
  }
  const auto j = plan_to_json(rw);
  EXPECT_EQ(j["kind"], "reweight");
  EXPECT_EQ(j["heads"][1][0], 3);
}

TEST(Plan, RejectsUnknownFieldsAndVersions) {
  auto j = plan_to_json(ReweightPlan{{{0, 0}}, {1}, 0.5, true});
  auto extra = j;
  extra["temperature"] = 1.0;
  EXPECT_THROW(plan_from_json(extra), ValidationError);
  auto old = j;
  old["version"] = 2;
  EXPECT_THROW(plan_from_json(old), ValidationError);
  auto neg = j;
  neg["gamma"] = -1.0;
  EXPECT_THROW(plan_from_json(neg), ValidationError);
  auto kind = j;
  kind["kind"] = "boost";
  EXPECT_THROW(plan_from_json(kind), ValidationError);
  auto missing = j;
  missing.erase("heads");
  EXPECT_THROW(plan_from_json(missing), ValidationError);
}
