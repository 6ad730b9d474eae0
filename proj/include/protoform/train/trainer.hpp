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

#ifndef PROTOFORM_TRAIN_TRAINER_HPP_
#define PROTOFORM_TRAIN_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoform/autodiff/adamw.hpp"
#include "protoform/data/dataset.hpp"
#include "protoform/losses/losses.hpp"
#include "protoform/metrics/metrics.hpp"
#include "protoform/train/config.hpp"
#include "protoform/train/model.hpp"

namespace protoform {

// A non-finite value appeared during training. `tensor()` names the first
// offending tensor in evaluation order.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string tensor, const std::string& what)
      : std::runtime_error(what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

// Malformed or incompatible checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'P', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StepResult {
  LossValues loss;
  double grad_norm = 0.0;  // before clipping
};

struct EpochSummary {
  Index epoch = 0;  // 1-based
  LossValues loss;  // mean over the epoch's steps
  std::optional<metrics::EvalReport> val;
};

struct FitOptions {
  // Checkpoints (best.pfck, last.pfck, last_good.pfck) go here; empty
  // disables file output.
  std::filesystem::path out_dir;
  // Receives one JSON object per step and per epoch.
  std::function<void(const nlohmann::json&)> log;
};

struct FitResult {
  std::vector<EpochSummary> epochs;
  Index best_epoch = 0;
  std::optional<double> best_val_miou;
};

// Inference output for a set of clouds, rows grouped per cloud.
struct Inference {
  MatrixX<float> embeddings;
  MatrixX<float> activations;  // empty for the baseline
  MatrixX<float> probs;
  std::vector<Index> offsets;
};

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<std::string> affordances);

  Trainer(Trainer&&) = default;
  Trainer& operator=(Trainer&&) = default;
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // One optimizer step on `batch` as given (no augmentation). Without
  // `random_sampling` every cloud's first FPS center is point 0.
  StepResult Step(const std::vector<PointCloud>& batch, bool random_sampling = true);

  // Shuffles, augments and steps through `train` once.
  EpochSummary TrainEpoch(const std::vector<PointCloud>& train,
                          const FitOptions& options = {});

  // Evaluation mode: running batch statistics, first FPS center 0.
  metrics::EvalReport Evaluate(const std::vector<PointCloud>& clouds);
  // As above after checking that the dataset's affordance list matches.
  metrics::EvalReport Evaluate(const Dataset& data);
  void CheckAffordances(const DatasetManifest& manifest) const;
  Inference Infer(const std::vector<PointCloud>& clouds);

  // Trains up to config().epochs total epochs, keeping the checkpoint with
  // the best validation mean IoU. Resumes from epoch() when loaded.
  FitResult Fit(const std::vector<PointCloud>& train,
                const std::vector<PointCloud>* val, const FitOptions& options = {});

  void Save(const std::filesystem::path& path) const;
  static Trainer Load(const std::filesystem::path& path);

  const TrainConfig& config() const { return config_; }
  const std::vector<std::string>& affordances() const { return affordances_; }
  std::vector<std::string> class_names() const;
  TargetMode target_mode() const { return mode_; }
  PrototypeSegmenter<float>& model() { return model_; }
  const PrototypeSegmenter<float>& model() const { return model_; }
  Index epoch() const { return epoch_; }
  std::optional<double> best_val_miou() const { return best_val_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  TrainConfig config_;
  std::vector<std::string> affordances_;
  TargetMode mode_;
  std::mt19937_64 rng_;
  PrototypeSegmenter<float> model_;
  AdamW<float> optimizer_;
  Index epoch_ = 0;
  std::optional<double> best_val_;
};

struct AblationRow {
  Index prototypes_per_class = 0;
  Index parameters = 0;
  metrics::EvalReport report;
};

// Trains one model per prototype count from `base` and evaluates it on
// `val`.
std::vector<AblationRow> ablate_prototypes(
    const TrainConfig& base, const std::vector<std::string>& affordances,
    const std::vector<PointCloud>& train, const std::vector<PointCloud>& val,
    const std::vector<Index>& counts = {1, 3, 5, 10},
    const FitOptions& options = {});

std::string AblationTable(const std::vector<AblationRow>& rows);

nlohmann::json ToJson(const LossValues& v);

}  // namespace protoform

#endif  // PROTOFORM_TRAIN_TRAINER_HPP_
