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

// Case-based explanations: per-point activation maps of the most active
// prototype of a class, and the training points each prototype responds to
// most strongly.

#ifndef PROTOFORM_EXPLAIN_EXPLAIN_HPP_
#define PROTOFORM_EXPLAIN_EXPLAIN_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoform/train/trainer.hpp"

namespace protoform::explain {

// Per-point activations of one prototype over one cloud.
struct ActivationMap {
  Index prototype = 0;
  int class_id = -1;  // -1 for shared prototypes
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<float> values;
};

struct Exemplar {
  std::string shape_id;
  Index shape_index = 0;
  Index point = 0;
  double activation = 0.0;
};

struct PrototypeExemplars {
  Index prototype = 0;
  int class_id = -1;
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<Exemplar> exemplars;  // descending activation
};

struct ExplanationBundle {
  std::string shape_id;
  std::vector<int> predicted;  // per-point argmax class index
  std::string explained_class;
  Index class_index = 0;
  ActivationMap map;
  std::vector<PrototypeExemplars> prototypes;  // exemplars of every prototype

  nlohmann::json ToJson() const;
  static ExplanationBundle FromJson(const nlohmann::json& j);
};

// Activations [S, P] of every prototype for one cloud in evaluation mode.
MatrixX<float> PrototypeActivations(Trainer& trainer, const PointCloud& cloud);

// The class's prototype whose maximum activation over the cloud is largest
// (ties: lowest prototype index). Shared banks consider every prototype.
ActivationMap activation_map(Trainer& trainer, const PointCloud& cloud,
                             const std::string& class_name);

// Full scan of `train`: for each prototype, the k shapes with the highest
// best-point activation, one point per shape.
std::vector<PrototypeExemplars> nearest_exemplars(Trainer& trainer,
                                                  const std::vector<PointCloud>& train,
                                                  Index k);

// Explains `cloud` for `class_name`, or for its most frequently predicted
// affordance class when empty (background only if nothing else is
// predicted).
ExplanationBundle explain(Trainer& trainer, const PointCloud& cloud,
                          const std::vector<PrototypeExemplars>& exemplars,
                          const std::string& class_name = "");

// Anchors, means, spreads and classes of every prototype.
nlohmann::json PrototypeBankJson(const Trainer& trainer);

// 256-entry viridis lookup; field values are scaled to [0, 255] between the
// field's minimum and maximum (a constant field maps to entry 0).
std::array<std::uint8_t, 3> Viridis(std::size_t bin);

// ASCII PLY with x, y, z, scalar and RGB per vertex.
void export_ply(const MatrixX<float>& coords, std::span<const float> field,
                const std::filesystem::path& path);

// Writes bundle_<id>.json and activation_<id>.ply per cloud plus
// manifest.json into `out_dir`; returns the manifest.
nlohmann::json ExportExplanations(Trainer& trainer, const std::vector<PointCloud>& clouds,
                                  const std::vector<PointCloud>& train, Index k,
                                  const std::filesystem::path& out_dir,
                                  const std::string& class_name = "");

}  // namespace protoform::explain

#endif  // PROTOFORM_EXPLAIN_EXPLAIN_HPP_
