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

// Backbone -> prototype activations -> classification head. The baseline
// variant drops the prototypes and maps embeddings straight to classes.

#ifndef PROTOFORM_TRAIN_MODEL_HPP_
#define PROTOFORM_TRAIN_MODEL_HPP_

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoform/backbones/backbone.hpp"
#include "protoform/prototype/prototype_layer.hpp"

namespace protoform {

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::Desk();
  Index prototypes_per_class = 3;
  HeadMode mode = HeadMode::kMulticlass;
  bool baseline = false;
  PrototypeInit init;
};

template <typename Scalar>
struct ModelOutput {
  Tensor<Scalar> embeddings;   // [N, D]
  Tensor<Scalar> activations;  // [N, P]; undefined for the baseline
  Tensor<Scalar> probs;        // [N, classes]
  std::vector<Index> offsets;
};

template <typename Scalar>
class PrototypeSegmenter {
 public:
  PrototypeSegmenter() = default;

  template <typename Rng>
  PrototypeSegmenter(const ModelConfig& config, Index num_classes, Rng& rng)
      : config_(config), num_classes_(num_classes), backbone_(config.backbone, rng) {
    if (num_classes < 1) throw std::invalid_argument("model: no classes");
    const Index d = config.backbone.embed_dim;
    if (config.baseline) {
      baseline_head_ = Linear<Scalar>(d, num_classes, rng);
      return;
    }
    const bool shared = config.mode == HeadMode::kMultilabel;
    bank_ = PrototypeBank<Scalar>(num_classes, config.prototypes_per_class, d,
                                  shared, rng, config.init);
    head_ = ClassificationHead<Scalar>(bank_.size(), num_classes, config.mode, rng);
    if (shared) {
      head_.InitSmallRandom(rng);
    } else {
      head_.InitFromClassIds(bank_.class_ids());
    }
  }

  ModelOutput<Scalar> Forward(const CloudBatch<Scalar>& batch,
                              const ForwardOptions& opt) {
    EmbeddingMap<Scalar> emb = backbone_(batch, opt);
    ModelOutput<Scalar> out;
    out.embeddings = emb.features;
    out.offsets = std::move(emb.offsets);
    if (config_.baseline) {
      Tensor<Scalar> logits = baseline_head_(emb.features);
      out.probs = config_.mode == HeadMode::kMulticlass ? softmax(logits)
                                                        : sigmoid(logits);
    } else {
      out.activations = bank_.Activate(emb.features);
      out.probs = head_(out.activations);
    }
    return out;
  }

  // Keeps prototype means inside [-1, 1]; call after every optimizer step.
  void AfterStep() {
    if (!config_.baseline) bank_.ClampMeans();
  }

  ParamList<Scalar> Parameters() const {
    ParamList<Scalar> out;
    backbone_.Collect("backbone", out);
    if (config_.baseline) {
      baseline_head_.Collect("head.linear", out);
    } else {
      bank_.Collect("prototypes", out);
      head_.Collect("head.linear", out);
    }
    return out;
  }

  BufferList<Scalar> Buffers() {
    BufferList<Scalar> out;
    backbone_.CollectBuffers("backbone", out);
    return out;
  }

  Index ParameterCount() const {
    Index n = 0;
    for (const auto& p : Parameters()) n += p.tensor.size();
    return n;
  }

  // Class of each prototype column; empty for the baseline.
  std::vector<int> prototype_classes() const {
    return config_.baseline ? std::vector<int>{} : bank_.class_ids();
  }

  // Copies parameter values and buffers from a model of any scalar type
  // built with the same configuration.
  template <typename Other>
  void CopyFrom(PrototypeSegmenter<Other>& other) {
    auto mine = Parameters();
    const auto theirs = other.Parameters();
    if (mine.size() != theirs.size()) {
      throw std::invalid_argument("model: parameter lists differ");
    }
    for (std::size_t i = 0; i < mine.size(); ++i) {
      mine[i].tensor.mutable_value() =
          theirs[i].tensor.value().template cast<Scalar>();
    }
    auto mb = Buffers();
    auto tb = other.Buffers();
    for (std::size_t i = 0; i < mb.size(); ++i) {
      *mb[i].buffer = tb[i].buffer->template cast<Scalar>();
    }
  }

  const ModelConfig& config() const { return config_; }
  Index num_classes() const { return num_classes_; }
  bool baseline() const { return config_.baseline; }
  PrototypeBank<Scalar>& bank() { return bank_; }
  const PrototypeBank<Scalar>& bank() const { return bank_; }
  ClassificationHead<Scalar>& head() { return head_; }
  Backbone<Scalar>& backbone() { return backbone_; }

 private:
  ModelConfig config_;
  Index num_classes_ = 0;
  Backbone<Scalar> backbone_;
  PrototypeBank<Scalar> bank_;
  ClassificationHead<Scalar> head_;
  Linear<Scalar> baseline_head_;
};

}  // namespace protoform

#endif  // PROTOFORM_TRAIN_MODEL_HPP_
