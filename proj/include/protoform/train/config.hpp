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

#ifndef PROTOFORM_TRAIN_CONFIG_HPP_
#define PROTOFORM_TRAIN_CONFIG_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoform/train/model.hpp"

namespace protoform {

// Invalid or unknown configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AugmentConfig {
  bool enabled = true;
  bool rotate = true;
  bool shuffle = true;
  double jitter = 0.05;
};

struct TrainConfig {
  ModelConfig model;
  Index epochs = 25;
  Index batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 1e-8;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 10.0;
  // Validate every this many epochs (and always after the last one).
  Index eval_every = 1;

  void Validate() const;
};

// "desk" (small PointNet++), "full" (512/128-center PointNet++),
// "dgcnn-desk" (k = 16) or "dgcnn" (k = 20).
BackboneConfig BackbonePreset(const std::string& name);

nlohmann::json ToJson(const BackboneConfig& c);
nlohmann::json ToJson(const ModelConfig& c);
nlohmann::json ToJson(const TrainConfig& c);

// Strict: any key not defined by the schema (or listed in `extra_keys` at
// the top level) raises ConfigError naming its path. Missing keys keep
// their defaults.
BackboneConfig BackboneConfigFromJson(const nlohmann::json& j,
                                      const std::string& path = "model.backbone");
TrainConfig TrainConfigFromJson(const nlohmann::json& j,
                                const std::vector<std::string>& extra_keys = {});

std::string ToString(HeadMode mode);
HeadMode HeadModeFromString(const std::string& s);

}  // namespace protoform

#endif  // PROTOFORM_TRAIN_CONFIG_HPP_
