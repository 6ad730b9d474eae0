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

#include "protoform/train/config.hpp"

#include <algorithm>

namespace protoform {
namespace {

using nlohmann::json;

void CheckKeys(const json& j, const std::string& path,
               const std::vector<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown config key '" + (path.empty() ? "" : path + ".") +
                        key + "'");
    }
  }
}

template <typename V>
void Read(const json& j, const char* key, const std::string& path, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + (path.empty() ? "" : path + ".") + key +
                      "' has the wrong type");
  }
}

std::string Join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

}  // namespace

std::string ToString(HeadMode mode) {
  return mode == HeadMode::kMulticlass ? "multiclass" : "multilabel";
}

HeadMode HeadModeFromString(const std::string& s) {
  if (s == "multiclass") return HeadMode::kMulticlass;
  if (s == "multilabel") return HeadMode::kMultilabel;
  throw ConfigError("unknown mode '" + s + "' (expected multiclass or multilabel)");
}

BackboneConfig BackbonePreset(const std::string& name) {
  if (name == "desk") return BackboneConfig::Desk();
  if (name == "full") return BackboneConfig{};
  if (name == "dgcnn-desk" || name == "dgcnn") {
    BackboneConfig c = name == "dgcnn" ? BackboneConfig{} : BackboneConfig::Desk();
    c.kind = BackboneKind::kDgcnn;
    return c;
  }
  throw ConfigError("unknown backbone preset '" + name +
                    "' (expected desk, full, dgcnn-desk or dgcnn)");
}

json ToJson(const BackboneConfig& c) {
  json stages = json::array();
  for (const auto& s : c.pointnetpp.stages) {
    stages.push_back({{"samples", s.samples},
                      {"radius", s.radius},
                      {"neighbors", s.neighbors},
                      {"mlp", s.mlp}});
  }
  return {{"kind", c.kind == BackboneKind::kPointNetPP ? "pointnetpp" : "dgcnn"},
          {"embed_dim", c.embed_dim},
          {"pointnetpp",
           {{"stages", stages},
            {"global_mlp", c.pointnetpp.global_mlp},
            {"fp_widths", c.pointnetpp.fp_widths}}},
          {"dgcnn", {{"k", c.dgcnn.k}, {"edge_widths", c.dgcnn.edge_widths}}}};
}

json ToJson(const ModelConfig& c) {
  return {{"backbone", ToJson(c.backbone)},
          {"prototypes_per_class", c.prototypes_per_class},
          {"mode", ToString(c.mode)},
          {"baseline", c.baseline},
          {"init",
           {{"mu", c.init.mu}, {"sigma", c.init.sigma}, {"sigma_min", c.init.sigma_min}}}};
}

json ToJson(const TrainConfig& c) {
  return {{"model", ToJson(c.model)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"augment",
           {{"enabled", c.augment.enabled},
            {"rotate", c.augment.rotate},
            {"shuffle", c.augment.shuffle},
            {"jitter", c.augment.jitter}}},
          {"clip_norm", c.clip_norm},
          {"eval_every", c.eval_every}};
}

BackboneConfig BackboneConfigFromJson(const json& j, const std::string& path) {
  CheckKeys(j, path, {"preset", "kind", "embed_dim", "pointnetpp", "dgcnn"});
  BackboneConfig c = BackboneConfig::Desk();
  if (j.contains("preset")) {
    std::string preset;
    Read(j, "preset", path, preset);
    c = BackbonePreset(preset);
  }
  if (j.contains("kind")) {
    std::string kind;
    Read(j, "kind", path, kind);
    if (kind == "pointnetpp") {
      c.kind = BackboneKind::kPointNetPP;
    } else if (kind == "dgcnn") {
      c.kind = BackboneKind::kDgcnn;
    } else {
      throw ConfigError("unknown backbone kind '" + kind + "'");
    }
  }
  Read(j, "embed_dim", path, c.embed_dim);
  if (j.contains("pointnetpp")) {
    const auto& p = j.at("pointnetpp");
    const std::string pp = Join(path, "pointnetpp");
    CheckKeys(p, pp, {"stages", "global_mlp", "fp_widths"});
    if (p.contains("stages")) {
      if (!p.at("stages").is_array()) throw ConfigError(pp + ".stages: expected an array");
      c.pointnetpp.stages.clear();
      for (std::size_t i = 0; i < p.at("stages").size(); ++i) {
        const auto& s = p.at("stages")[i];
        const std::string sp = pp + ".stages[" + std::to_string(i) + "]";
        CheckKeys(s, sp, {"samples", "radius", "neighbors", "mlp"});
        SetAbstractionConfig sa;
        Read(s, "samples", sp, sa.samples);
        Read(s, "radius", sp, sa.radius);
        Read(s, "neighbors", sp, sa.neighbors);
        Read(s, "mlp", sp, sa.mlp);
        c.pointnetpp.stages.push_back(sa);
      }
    }
    Read(p, "global_mlp", pp, c.pointnetpp.global_mlp);
    Read(p, "fp_widths", pp, c.pointnetpp.fp_widths);
  }
  if (j.contains("dgcnn")) {
    const auto& d = j.at("dgcnn");
    const std::string dp = Join(path, "dgcnn");
    CheckKeys(d, dp, {"k", "edge_widths"});
    Read(d, "k", dp, c.dgcnn.k);
    Read(d, "edge_widths", dp, c.dgcnn.edge_widths);
  }
  return c;
}

TrainConfig TrainConfigFromJson(const json& j,
                                const std::vector<std::string>& extra_keys) {
  std::vector<std::string> allowed{"model",    "epochs", "batch_size", "lr",
                                   "weight_decay", "seed", "augment", "clip_norm",
                                   "eval_every"};
  allowed.insert(allowed.end(), extra_keys.begin(), extra_keys.end());
  CheckKeys(j, "", allowed);
  TrainConfig c;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    CheckKeys(m, "model", {"backbone", "prototypes_per_class", "mode", "baseline", "init"});
    if (m.contains("backbone")) c.model.backbone = BackboneConfigFromJson(m.at("backbone"));
    Read(m, "prototypes_per_class", "model", c.model.prototypes_per_class);
    if (m.contains("mode")) {
      std::string mode;
      Read(m, "mode", "model", mode);
      c.model.mode = HeadModeFromString(mode);
    }
    Read(m, "baseline", "model", c.model.baseline);
    if (m.contains("init")) {
      const auto& i = m.at("init");
      CheckKeys(i, "model.init", {"mu", "sigma", "sigma_min"});
      Read(i, "mu", "model.init", c.model.init.mu);
      Read(i, "sigma", "model.init", c.model.init.sigma);
      Read(i, "sigma_min", "model.init", c.model.init.sigma_min);
    }
  }
  Read(j, "epochs", "", c.epochs);
  Read(j, "batch_size", "", c.batch_size);
  Read(j, "lr", "", c.lr);
  Read(j, "weight_decay", "", c.weight_decay);
  Read(j, "seed", "", c.seed);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    CheckKeys(a, "augment", {"enabled", "rotate", "shuffle", "jitter"});
    Read(a, "enabled", "augment", c.augment.enabled);
    Read(a, "rotate", "augment", c.augment.rotate);
    Read(a, "shuffle", "augment", c.augment.shuffle);
    Read(a, "jitter", "augment", c.augment.jitter);
  }
  Read(j, "clip_norm", "", c.clip_norm);
  Read(j, "eval_every", "", c.eval_every);
  return c;
}

void TrainConfig::Validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (augment.jitter < 0.0) throw ConfigError("augment.jitter must be >= 0");
  if (model.prototypes_per_class < 1) {
    throw ConfigError("model.prototypes_per_class must be >= 1");
  }
  if (!(model.init.sigma > model.init.sigma_min) || !(model.init.sigma_min > 0.0)) {
    throw ConfigError("model.init: need sigma > sigma_min > 0");
  }
  try {
    model.backbone.Validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace protoform
