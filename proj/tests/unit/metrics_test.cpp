/* Copyright 2026 The Protoform Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <random>

#include <gtest/gtest.h>

#include "../support/suites.hpp"
#include "protoform/metrics/metrics.hpp"

namespace protoform::metrics {
namespace {

TEST(MetricsTest, OracleSuite) {
  const auto r = testing::RunMetricOracleSuite();
  EXPECT_TRUE(r.passed) << r.Summary();
}

TEST(MetricsTest, SinglePositiveRankedLast) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  const std::vector<std::uint8_t> g{0, 0, 0, 1};
  EXPECT_NEAR(*average_precision(s, g), 0.25, 1e-12);
  EXPECT_NEAR(*roc_auc(s, g), 0.0, 1e-12);
}

TEST(MetricsTest, PerfectRankingAndTies) {
  const std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  const std::vector<std::uint8_t> g{1, 1, 0, 0};
  EXPECT_NEAR(*average_precision(s, g), 1.0, 1e-12);
  EXPECT_NEAR(*roc_auc(s, g), 1.0, 1e-12);
  const std::vector<double> tied(4, 0.5);
  EXPECT_NEAR(*roc_auc(tied, g), 0.5, 1e-12);
  EXPECT_NEAR(*average_precision(tied, g), 0.5, 1e-12);
}

TEST(MetricsTest, UndefinedWithoutBothLabels) {
  const std::vector<double> s{0.3, 0.4};
  const std::vector<std::uint8_t> none{0, 0}, all{1, 1};
  EXPECT_FALSE(average_precision(s, none).has_value());
  EXPECT_FALSE(roc_auc(s, none).has_value());
  EXPECT_FALSE(roc_auc(s, all).has_value());
}

TEST(MetricsTest, RaisingAFalseNegativeNeverLowersIou) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(24);
    std::vector<std::uint8_t> g(24);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = u(rng);
      g[i] = u(rng) < 0.4 ? 1 : 0;
    }
    std::vector<std::size_t> fn;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (g[i] == 1 && s[i] < 0.5) fn.push_back(i);
    }
    if (fn.empty()) continue;
    const std::size_t i = fn[static_cast<std::size_t>(u(rng) * fn.size())];
    const double before = iou_per_class(s, g);
    s[i] = s[i] + u(rng) * (1.0 - s[i]);
    EXPECT_GE(iou_per_class(s, g), before - 1e-15);
    ++checked;
  }
  EXPECT_GT(checked, 150);
}

TEST(MetricsTest, IouOfExactBinaryPredictionIsOne) {
  const std::vector<double> s{1.0, 0.0, 1.0};
  const std::vector<std::uint8_t> g{1, 0, 1};
  EXPECT_NEAR(iou_per_class(s, g), 1.0, 1e-12);
}

TEST(MetricsTest, AccumulatorOracleInjectionGivesPerfectScores) {
  MetricAccumulator acc({"a", "b"});
  const std::vector<float> gt{1, 0, 0, 1, 1, 0, 0, 1};
  acc.Add(gt, gt, 4);
  const auto r = acc.Report();
  EXPECT_NEAR(*r.mean_iou, 1.0, 1e-12);
  EXPECT_NEAR(*r.mean_ap, 1.0, 1e-12);
  EXPECT_NEAR(*r.mean_auc, 1.0, 1e-12);
  EXPECT_EQ(r.mean_mse, 0.0);
}

TEST(MetricsTest, AbsentClassIsExcludedNotZero) {
  MetricAccumulator acc({"present", "absent"});
  const std::vector<float> pred{0.9f, 0.3f, 0.1f, 0.2f};
  const std::vector<float> gt{1, 0, 0, 0};
  acc.Add(pred, gt, 2);
  const auto r = acc.Report();
  EXPECT_FALSE(r.classes[1].iou.has_value());
  EXPECT_NEAR(*r.mean_iou, *r.classes[0].iou, 1e-12);
}

TEST(MetricsTest, MergeIsShardOrderConcatenation) {
  const std::vector<float> p1{0.9f, 0.2f}, g1{1, 0}, p2{0.4f, 0.6f}, g2{1, 0};
  MetricAccumulator whole({"x"}), a({"x"}), b({"x"});
  whole.Add(p1, g1, 2);
  whole.Add(p2, g2, 2);
  a.Add(p1, g1, 2);
  b.Add(p2, g2, 2);
  a.Merge(b);
  EXPECT_EQ(a.Report().ToJson(), whole.Report().ToJson());
}

TEST(MetricsTest, ReportJsonRoundTripAndTableLayout) {
  MetricAccumulator acc({"grasp", "contain"});
  const std::vector<float> pred{0.9f, 0.1f, 0.2f, 0.7f};
  const std::vector<float> gt{1, 0, 0, 1};
  acc.Add(pred, gt, 2);
  const auto r = acc.Report();
  EXPECT_EQ(EvalReport::FromJson(r.ToJson()).ToJson(), r.ToJson());
  const std::string table = r.ToTable();
  EXPECT_NE(table.find("grasp"), std::string::npos);
  EXPECT_NE(table.find("Average"), std::string::npos);
  EXPECT_NE(table.find("100.00"), std::string::npos);
  // header, rule, 2 classes, rule, average
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
}

}  // namespace
}  // namespace protoform::metrics
