// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "dskd/error.hpp"
#include "dskd/metrics.hpp"
#include "oracles.hpp"

using namespace dskd;

namespace {

/// 4x4 map, one 2x2 region at the top-left with saturation 2 px. The
/// prediction at threshold 0.5 covers one region pixel and one of the 12
/// normal pixels.
EvalRecord four_by_four() {
  EvalRecord r;
  r.label = ImageLabel::Structural;
  r.anomaly_map = ScoreMap(4, 4, ScoreKind::Fused, 0.0);
  r.anomaly_map.at(0, 0) = 1.0;
  r.anomaly_map.at(3, 3) = 1.0;
  DefectRegion reg;
  reg.mask = Mask(4, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) reg.mask.at(y, x) = 1;
  reg.saturation_threshold = 2.0;
  reg.defect_name = "patch";
  r.regions.push_back(reg);
  return r;
}

EvalRecord good_record(double score, int size = 4, double fill = 0.0) {
  EvalRecord r;
  r.image_score = score;
  r.anomaly_map = ScoreMap(size, size, ScoreKind::Fused, fill);
  return r;
}

EvalRecord anomalous_record(ImageLabel label, double score, double inside, double outside) {
  EvalRecord r = four_by_four();
  r.label = label;
  r.image_score = score;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) r.anomaly_map.at(y, x) = (y < 2 && x < 2) ? inside : outside;
  if (label == ImageLabel::Logical) r.regions[0].defect_type = DefectType::Logical;
  return r;
}

}  // namespace

TEST(Auroc, TiedExample) {
  const std::vector<double> s = {1, 2, 2, 3};
  const std::vector<int> l = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auroc(s, l), 0.875);
}

TEST(Auroc, SeparatedAndInverted) {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  EXPECT_EQ(auroc(s, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auroc(s, std::vector<int>{1, 1, 0, 0}), 0.0);
}

TEST(Auroc, MatchesPairCountingExactly) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 37;
    std::vector<double> s(n);
    std::vector<int> l(n);
    // coarse values half the time so ties occur
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 2 ? std::uniform_int_distribution<int>(0, 4)(rng)
                       : std::uniform_real_distribution<double>(-1, 1)(rng);
      l[i] = std::uniform_int_distribution<int>(0, 1)(rng);
    }
    l[0] = 0;
    l[1] = 1;
    EXPECT_EQ(auroc(s, l), oracle::auroc_pairs(s, l)) << "trial " << trial;
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(4);
  std::vector<double> s(50), t(50);
  std::vector<int> l(50);
  for (int i = 0; i < 50; ++i) {
    s[i] = std::uniform_real_distribution<double>(-3, 3)(rng);
    t[i] = std::exp(2 * s[i]) + 7;
    l[i] = i % 3 == 0;
  }
  EXPECT_EQ(auroc(s, l), auroc(t, l));
}

TEST(Auroc, RejectsDegenerateInputs) {
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), UndefinedMetricError);
  EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), InputError);
  EXPECT_THROW(auroc(std::vector<double>{1}, std::vector<int>{0, 1}), InputError);
}

TEST(Spro, FourByFourFixture) {
  const std::vector<EvalRecord> recs = {four_by_four()};
  const CurvePoint p = spro_at_threshold(recs, 0.5);
  EXPECT_NEAR(p.fpr, 1.0 / 12.0, 1e-9);
  EXPECT_NEAR(p.spro, 0.5, 1e-9);
}

TEST(Spro, EmptyPredictionAndFullCoverage) {
  const std::vector<EvalRecord> recs = {four_by_four()};
  EXPECT_EQ(spro_at_threshold(recs, 2.0), (CurvePoint{0.0, 0.0}));
  EXPECT_EQ(spro_at_threshold(recs, -1.0), (CurvePoint{1.0, 1.0}));
  // overlap beyond the saturation threshold earns no extra credit
  EvalRecord r = four_by_four();
  r.anomaly_map.at(0, 1) = 1.0;
  r.anomaly_map.at(1, 1) = 1.0;
  const std::vector<EvalRecord> sat = {r};
  EXPECT_EQ(spro_at_threshold(sat, 0.5).spro, 1.0);
}

TEST(Spro, CurveIsMonotone) {
  std::mt19937_64 rng(5);
  std::vector<EvalRecord> recs = {four_by_four(), four_by_four(), good_record(0.0)};
  for (auto& r : recs) {
    for (double& v : r.anomaly_map.values) v = std::uniform_real_distribution<double>(0, 1)(rng);
  }
  const auto curve = spro_curve(recs, 64);
  ASSERT_GE(curve.size(), 2u);
  EXPECT_EQ(curve.front(), (CurvePoint{0.0, 0.0}));
  EXPECT_EQ(curve.back(), (CurvePoint{1.0, 1.0}));
  for (std::size_t i = 1; i < curve.size(); ++i) {
    EXPECT_GE(curve[i].fpr, curve[i - 1].fpr);
    EXPECT_GE(curve[i].spro, curve[i - 1].spro);
  }
}

TEST(Spro, RequiresRegionsAndMatchingMasks) {
  const std::vector<EvalRecord> none = {good_record(0.0)};
  EXPECT_THROW(spro_curve(none), UndefinedMetricError);
  EvalRecord r = four_by_four();
  r.regions[0].mask = Mask(3, 3);
  r.regions[0].mask.at(0, 0) = 1;
  r.regions[0].saturation_threshold = 1;
  EXPECT_THROW(spro_curve(std::vector<EvalRecord>{r}), InputError);
  EvalRecord bad = four_by_four();
  bad.regions[0].saturation_threshold = 5.0;
  EXPECT_THROW(spro_curve(std::vector<EvalRecord>{bad}), ContractError);
}

TEST(AuSpro, TrapezoidFixtures) {
  const std::vector<CurvePoint> perfect = {{0.0, 1.0}, {0.05, 1.0}};
  const std::vector<CurvePoint> blind = {{0.0, 0.0}, {1.0, 0.0}};
  const std::vector<CurvePoint> linear = {{0.0, 0.0}, {0.05, 1.0}};
  EXPECT_NEAR(au_spro(perfect, 0.05).value, 1.0, 1e-9);
  EXPECT_NEAR(au_spro(blind, 0.05).value, 0.0, 1e-9);
  EXPECT_NEAR(au_spro(linear, 0.05).value, 0.5, 1e-9);
}

TEST(AuSpro, InterpolatesAtTheLimit) {
  // linear from (0,0) to (0.1,1): at 0.05 the sPRO is 0.5, area 0.0125
  const std::vector<CurvePoint> c = {{0.0, 0.0}, {0.1, 1.0}};
  EXPECT_NEAR(au_spro(c, 0.05).value, 0.25, 1e-9);
  const auto r = au_spro(std::vector<CurvePoint>{{0.01, 1.0}}, 0.05);
  EXPECT_EQ(r.warnings.size(), 2u);
  EXPECT_NEAR(r.value, (0.5 * 0.01 + 0.04) / 0.05, 1e-9);
  EXPECT_THROW(au_spro(c, 0.0), ConfigError);
  EXPECT_THROW(au_spro(std::vector<CurvePoint>{{0.2, 0}, {0.1, 1}}, 0.05), InputError);
}

TEST(AuSpro, FourByFourCurve) {
  // thresholds give points (0,0), (1/12,0.5), (1,1); the limit 0.05 falls on
  // the first segment where sPRO = 6 * fpr
  const std::vector<EvalRecord> recs = {four_by_four()};
  const auto curve = spro_curve(recs, 16);
  EXPECT_NEAR(au_spro(curve, 0.05).value, 0.5 * 0.3 * 0.05 / 0.05, 1e-9);
}

TEST(Report, SixNumbersAndSerialisations) {
  std::vector<EvalRecord> recs;
  for (int i = 0; i < 4; ++i) recs.push_back(good_record(0.1 * i));
  recs.push_back(anomalous_record(ImageLabel::Structural, 0.9, 1.0, 0.0));
  recs.push_back(anomalous_record(ImageLabel::Structural, 0.25, 0.5, 0.2));
  recs.push_back(anomalous_record(ImageLabel::Logical, 0.05, 0.3, 0.1));
  recs.push_back(anomalous_record(ImageLabel::Logical, 0.35, 0.2, 0.0));
  const MetricsReport r = build_report(recs, "toy", "combined", 0.05, 128);
  ASSERT_TRUE(r.auroc_structural.value && r.auroc_logical.value && r.auroc_mean.value);
  ASSERT_TRUE(r.au_spro_structural.value && r.au_spro_logical.value && r.au_spro_mean.value);
  // structural: 0.9 beats all four, 0.25 beats three of four
  EXPECT_DOUBLE_EQ(*r.auroc_structural.value, 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(*r.auroc_logical.value, 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(*r.auroc_mean.value, 0.75);
  EXPECT_NEAR(*r.au_spro_mean.value, 0.5 * (*r.au_spro_structural.value + *r.au_spro_logical.value),
              1e-15);

  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["category"], "toy");
  EXPECT_DOUBLE_EQ(j["auroc"]["structural"].get<double>(), 0.875);
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.rfind("category,split,metric,value\n", 0), 0u);
  EXPECT_NE(csv.find("toy,structural,auroc,0.875\n"), std::string::npos);
  EXPECT_NE(csv.find("au_spro@0.05"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Report, ConstantScoresAreUndefinedNotHalf) {
  std::vector<EvalRecord> recs;
  for (int i = 0; i < 3; ++i) recs.push_back(good_record(1.0, 4, 1.0));
  recs.push_back(anomalous_record(ImageLabel::Structural, 1.0, 1.0, 1.0));
  recs.push_back(anomalous_record(ImageLabel::Logical, 1.0, 1.0, 1.0));
  const MetricsReport r = build_report(recs, "flat", "local");
  EXPECT_FALSE(r.auroc_structural.value.has_value());
  EXPECT_FALSE(r.auroc_structural.error.empty());
  EXPECT_FALSE(r.auroc_mean.value.has_value());
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_TRUE(j["auroc"]["structural"].contains("error"));
  EXPECT_NE(r.to_csv().find("flat,structural,auroc,\n"), std::string::npos);
}

TEST(Report, MissingSplitIsUndefined) {
  std::vector<EvalRecord> recs = {good_record(0.1), good_record(0.2),
                                  anomalous_record(ImageLabel::Structural, 0.9, 1.0, 0.0)};
  const MetricsReport r = build_report(recs, "c", "local");
  EXPECT_TRUE(r.auroc_structural.value.has_value());
  EXPECT_FALSE(r.auroc_logical.value.has_value());
  EXPECT_FALSE(r.au_spro_logical.value.has_value());
}
