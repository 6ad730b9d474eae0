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

#include "protoform/metrics/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace protoform::metrics {
namespace {

void CheckSizes(const char* op, std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(a) +
                                " scores vs " + std::to_string(b) + " labels");
  }
}

std::optional<double> MeanOf(const std::vector<ClassMetrics>& classes,
                             std::optional<double> ClassMetrics::*field) {
  double acc = 0.0;
  int n = 0;
  for (const auto& c : classes) {
    if (c.*field) {
      acc += *(c.*field);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / n;
}

nlohmann::json OptJson(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> OptFromJson(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::vector<double> IouThresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 99; ++k) t.push_back(k / 100.0);
  return t;
}

std::vector<std::uint8_t> Binarize(std::span<const double> gt_scores) {
  std::vector<std::uint8_t> out(gt_scores.size());
  for (std::size_t i = 0; i < gt_scores.size(); ++i) {
    out[i] = gt_scores[i] >= kPositiveThreshold ? 1 : 0;
  }
  return out;
}

double iou_per_class(std::span<const double> scores,
                     std::span<const std::uint8_t> gt) {
  CheckSizes("iou", scores.size(), gt.size());
  std::vector<double> all(scores.begin(), scores.end());
  std::vector<double> pos;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (gt[i]) pos.push_back(scores[i]);
  }
  std::sort(all.begin(), all.end());
  std::sort(pos.begin(), pos.end());
  const auto at_least = [](const std::vector<double>& v, double t) {
    return static_cast<double>(v.end() - std::lower_bound(v.begin(), v.end(), t));
  };
  const auto thresholds = IouThresholds();
  double acc = 0.0;
  for (double t : thresholds) {
    const double inter = at_least(pos, t);
    const double uni = at_least(all, t) + static_cast<double>(pos.size()) - inter;
    acc += uni == 0.0 ? 1.0 : inter / uni;
  }
  return acc / static_cast<double>(thresholds.size());
}

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> gt) {
  CheckSizes("average_precision", scores.size(), gt.size());
  const auto positives =
      static_cast<double>(std::count_if(gt.begin(), gt.end(), [](auto g) { return g != 0; }));
  if (positives == 0.0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (gt[order[i]]) {
        tp += 1.0;
      } else {
        fp += 1.0;
      }
      ++i;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

std::optional<double> roc_auc(std::span<const double> scores,
                              std::span<const std::uint8_t> gt) {
  CheckSizes("roc_auc", scores.size(), gt.size());
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0, pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based average rank of the tied block [i, j).
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (gt[order[k]]) {
        rank_sum += rank;
        pos += 1.0;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double mse_per_class(std::span<const double> scores,
                     std::span<const double> gt_scores) {
  CheckSizes("mse", scores.size(), gt_scores.size());
  if (scores.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = scores[i] - gt_scores[i];
    acc += d * d;
  }
  return acc / static_cast<double>(scores.size());
}

nlohmann::json EvalReport::ToJson() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : classes) {
    per_class.push_back({{"name", c.name},
                         {"iou", OptJson(c.iou)},
                         {"ap", OptJson(c.ap)},
                         {"auc", OptJson(c.auc)},
                         {"mse", c.mse},
                         {"positives", c.positives}});
  }
  return {{"classes", per_class},
          {"mean", {{"iou", OptJson(mean_iou)},
                    {"ap", OptJson(mean_ap)},
                    {"auc", OptJson(mean_auc)},
                    {"mse", mean_mse}}},
          {"points", points},
          {"clouds", clouds}};
}

EvalReport EvalReport::FromJson(const nlohmann::json& j) {
  EvalReport r;
  for (const auto& c : j.at("classes")) {
    r.classes.push_back({c.at("name").get<std::string>(), OptFromJson(c.at("iou")),
                         OptFromJson(c.at("ap")), OptFromJson(c.at("auc")),
                         c.at("mse").get<double>(),
                         c.at("positives").get<long long>()});
  }
  const auto& m = j.at("mean");
  r.mean_iou = OptFromJson(m.at("iou"));
  r.mean_ap = OptFromJson(m.at("ap"));
  r.mean_auc = OptFromJson(m.at("auc"));
  r.mean_mse = m.at("mse").get<double>();
  r.points = j.at("points").get<long long>();
  r.clouds = j.at("clouds").get<long long>();
  return r;
}

std::string EvalReport::ToTable() const {
  std::size_t width = 11;
  for (const auto& c : classes) width = std::max(width, c.name.size() + 1);
  const auto pct = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("-");
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
    return std::string(buf);
  };
  const auto mse = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s %8s %8s %8s %8s\n",
                static_cast<int>(width), "Affordances", "mIoU", "mAP", "mAUC",
                "MSE");
  os << line << std::string(width + 36, '-') << '\n';
  for (const auto& c : classes) {
    std::snprintf(line, sizeof(line), "%-*s %8s %8s %8s %8s\n",
                  static_cast<int>(width), c.name.c_str(), pct(c.iou).c_str(),
                  pct(c.ap).c_str(), pct(c.auc).c_str(), mse(c.mse).c_str());
    os << line;
  }
  os << std::string(width + 36, '-') << '\n';
  std::snprintf(line, sizeof(line), "%-*s %8s %8s %8s %8s\n",
                static_cast<int>(width), "Average", pct(mean_iou).c_str(),
                pct(mean_ap).c_str(), pct(mean_auc).c_str(),
                mse(mean_mse).c_str());
  os << line;
  return os.str();
}

MetricAccumulator::MetricAccumulator(std::vector<std::string> class_names)
    : names_(std::move(class_names)),
      pred_(names_.size()),
      gt_(names_.size()) {}

void MetricAccumulator::Add(std::span<const float> pred,
                            std::span<const float> gt, long long points) {
  const std::size_t c = names_.size();
  if (pred.size() != static_cast<std::size_t>(points) * c ||
      gt.size() != pred.size()) {
    throw std::invalid_argument("metrics: expected " +
                                std::to_string(points * static_cast<long long>(c)) +
                                " entries for prediction and ground truth");
  }
  for (long long i = 0; i < points; ++i) {
    for (std::size_t a = 0; a < c; ++a) {
      pred_[a].push_back(pred[static_cast<std::size_t>(i) * c + a]);
      gt_[a].push_back(gt[static_cast<std::size_t>(i) * c + a]);
    }
  }
  points_ += points;
  ++clouds_;
}

void MetricAccumulator::Merge(const MetricAccumulator& other) {
  if (other.names_ != names_) {
    throw std::invalid_argument("metrics: cannot merge accumulators over "
                                "different class lists");
  }
  for (std::size_t a = 0; a < names_.size(); ++a) {
    pred_[a].insert(pred_[a].end(), other.pred_[a].begin(), other.pred_[a].end());
    gt_[a].insert(gt_[a].end(), other.gt_[a].begin(), other.gt_[a].end());
  }
  points_ += other.points_;
  clouds_ += other.clouds_;
}

EvalReport MetricAccumulator::Report() const {
  EvalReport report;
  for (std::size_t a = 0; a < names_.size(); ++a) {
    const auto gt = Binarize(gt_[a]);
    ClassMetrics m;
    m.name = names_[a];
    m.positives = std::count(gt.begin(), gt.end(), std::uint8_t{1});
    if (m.positives > 0) {
      m.iou = iou_per_class(pred_[a], gt);
      m.ap = average_precision(pred_[a], gt);
      m.auc = roc_auc(pred_[a], gt);
    }
    m.mse = mse_per_class(pred_[a], gt_[a]);
    report.classes.push_back(std::move(m));
  }
  report.mean_iou = MeanOf(report.classes, &ClassMetrics::iou);
  report.mean_ap = MeanOf(report.classes, &ClassMetrics::ap);
  report.mean_auc = MeanOf(report.classes, &ClassMetrics::auc);
  double acc = 0.0;
  for (const auto& c : report.classes) acc += c.mse;
  report.mean_mse = report.classes.empty() ? 0.0 : acc / report.classes.size();
  report.points = points_;
  report.clouds = clouds_;
  return report;
}

}  // namespace protoform::metrics
