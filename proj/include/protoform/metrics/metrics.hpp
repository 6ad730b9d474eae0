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

#ifndef PROTOFORM_METRICS_METRICS_HPP_
#define PROTOFORM_METRICS_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace protoform::metrics {

// Ground-truth scores at or above this value count as positive.
inline constexpr double kPositiveThreshold = 0.5;

// The 99 binarization thresholds 0.01, 0.02, ..., 0.99.
std::vector<double> IouThresholds();

// IoU of (score >= t) against gt, averaged over IouThresholds(). A threshold
// whose union is empty scores 1.
double iou_per_class(std::span<const double> scores,
                     std::span<const std::uint8_t> gt);

// Step-wise area under the precision/recall curve; tied scores form one
// block. nullopt without positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> gt);

// Mann-Whitney AUC with ties counted as 1/2. nullopt unless both classes
// occur.
std::optional<double> roc_auc(std::span<const double> scores,
                              std::span<const std::uint8_t> gt);

double mse_per_class(std::span<const double> scores,
                     std::span<const double> gt_scores);

std::vector<std::uint8_t> Binarize(std::span<const double> gt_scores);

struct ClassMetrics {
  std::string name;
  std::optional<double> iou;  // absent when the class has no positives
  std::optional<double> ap;
  std::optional<double> auc;
  double mse = 0.0;
  long long positives = 0;
};

struct EvalReport {
  std::vector<ClassMetrics> classes;
  std::optional<double> mean_iou;
  std::optional<double> mean_ap;
  std::optional<double> mean_auc;
  double mean_mse = 0.0;
  long long points = 0;
  long long clouds = 0;

  nlohmann::json ToJson() const;
  static EvalReport FromJson(const nlohmann::json& j);
  // Aligned text table: one row per class plus an average row.
  std::string ToTable() const;
};

// Pools per-class (prediction, raw ground truth) pairs. Accumulators from
// separate shards merge by concatenation in shard order.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::vector<std::string> class_names);

  // `pred` and `gt` are row-major [points, classes].
  void Add(std::span<const float> pred, std::span<const float> gt,
           long long points);
  void Merge(const MetricAccumulator& other);
  EvalReport Report() const;

  const std::vector<std::string>& class_names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<double>> pred_;
  std::vector<std::vector<double>> gt_;
  long long points_ = 0;
  long long clouds_ = 0;
};

}  // namespace protoform::metrics

#endif  // PROTOFORM_METRICS_METRICS_HPP_
