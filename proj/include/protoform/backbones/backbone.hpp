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

// Point-cloud encoders producing one D-dimensional embedding per point.
// Both backbones consume a batch of clouds and return the embeddings of all
// clouds stacked row-wise.

#ifndef PROTOFORM_BACKBONES_BACKBONE_HPP_
#define PROTOFORM_BACKBONES_BACKBONE_HPP_

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoform/backbones/layers.hpp"
#include "protoform/geometry/geometry.hpp"

namespace protoform {

enum class BackboneKind { kPointNetPP, kDgcnn };

struct SetAbstractionConfig {
  Index samples = 512;
  double radius = 0.2;
  Index neighbors = 32;
  std::vector<Index> mlp{64, 64, 128};
};

struct PointNetPPConfig {
  std::vector<SetAbstractionConfig> stages{
      {512, 0.2, 32, {64, 64, 128}},
      {128, 0.4, 64, {128, 128, 256}},
  };
  std::vector<Index> global_mlp{256, 512, 1024};
  // One width per feature-propagation stage, coarsest first. Each stage is a
  // two-layer MLP of that width; the last stage ends in a bare linear layer
  // producing the embedding.
  std::vector<Index> fp_widths{256, 256, 128};
};

struct DgcnnConfig {
  Index k = 20;
  std::vector<Index> edge_widths{64, 64, 128};
};

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kPointNetPP;
  Index embed_dim = 128;
  PointNetPPConfig pointnetpp;
  DgcnnConfig dgcnn;

  // A small PointNet++ sized for few-hundred-point clouds on a CPU.
  static BackboneConfig Desk() {
    BackboneConfig c;
    c.pointnetpp.stages = {{64, 0.25, 16, {32, 32, 64}},
                           {16, 0.5, 16, {64, 64, 128}}};
    c.pointnetpp.global_mlp = {128, 256};
    c.pointnetpp.fp_widths = {128, 128, 128};
    c.dgcnn.k = 16;
    return c;
  }

  void Validate() const {
    if (embed_dim < 1) throw std::invalid_argument("backbone: embed_dim < 1");
    if (kind == BackboneKind::kPointNetPP) {
      const auto& p = pointnetpp;
      if (p.stages.empty()) {
        throw std::invalid_argument("pointnetpp: no set-abstraction stages");
      }
      for (std::size_t i = 0; i < p.stages.size(); ++i) {
        const auto& s = p.stages[i];
        const std::string name = "pointnetpp stage sa" + std::to_string(i);
        if (s.samples < 3 || s.neighbors < 1 || s.radius <= 0 || s.mlp.empty()) {
          throw std::invalid_argument(name + ": invalid sampling parameters");
        }
        if (i > 0 && s.samples >= p.stages[i - 1].samples) {
          throw std::invalid_argument(name +
                                      ": sample counts must strictly decrease");
        }
      }
      if (p.global_mlp.empty()) {
        throw std::invalid_argument("pointnetpp stage global: empty MLP");
      }
      if (p.fp_widths.size() != p.stages.size() + 1) {
        throw std::invalid_argument(
            "pointnetpp stage fp: need " + std::to_string(p.stages.size() + 1) +
            " decoder widths, got " + std::to_string(p.fp_widths.size()));
      }
      if (p.fp_widths.back() != embed_dim) {
        throw std::invalid_argument(
            "pointnetpp stage fp" + std::to_string(p.fp_widths.size() - 1) +
            ": final decoder width must equal embed_dim");
      }
    } else {
      if (dgcnn.k < 1 || dgcnn.edge_widths.empty()) {
        throw std::invalid_argument("dgcnn: need k >= 1 and at least one "
                                    "EdgeConv block");
      }
    }
  }
};

// Coordinates of a batch of clouds (each [S_i, 3]).
template <typename Scalar>
struct CloudBatch {
  std::vector<MatrixX<Scalar>> coords;

  Index total_points() const {
    Index n = 0;
    for (const auto& c : coords) n += c.rows();
    return n;
  }
  std::vector<Index> offsets() const {
    std::vector<Index> off{0};
    for (const auto& c : coords) off.push_back(off.back() + c.rows());
    return off;
  }
};

struct ForwardOptions {
  bool training = false;
  // Source of random FPS starts in training; null means start index 0.
  std::mt19937_64* rng = nullptr;
  // Explicit first-stage FPS start per cloud; overrides the above.
  std::vector<Index> first_stage_start;
};

// Per-point embeddings of a batch, rows of cloud b in [offsets[b], offsets[b+1]).
template <typename Scalar>
struct EmbeddingMap {
  Tensor<Scalar> features;
  std::vector<Index> offsets;
};

namespace detail {

template <typename Scalar>
MatrixX<Scalar> StackRows(const std::vector<MatrixX<Scalar>>& parts) {
  Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  MatrixX<Scalar> out(rows, parts.empty() ? 0 : parts[0].cols());
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

inline Index FpsStart(const ForwardOptions& opt, std::size_t cloud,
                      std::size_t stage, Index n) {
  if (stage == 0 && !opt.first_stage_start.empty()) {
    return opt.first_stage_start.at(cloud);
  }
  if (opt.training && opt.rng != nullptr) {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    return pick(*opt.rng);
  }
  return 0;
}

}  // namespace detail

template <typename Scalar>
class PointNetPP {
 public:
  PointNetPP() = default;
  template <typename Rng>
  PointNetPP(const BackboneConfig& config, Rng& rng) : config_(config) {
    config.Validate();
    const auto& p = config.pointnetpp;
    Index feat = 0;
    std::vector<Index> level_feats{0};
    for (const auto& s : p.stages) {
      sa_.emplace_back(3 + feat, s.mlp, rng);
      feat = s.mlp.back();
      level_feats.push_back(feat);
    }
    global_ = SharedMlp<Scalar>(3 + feat, p.global_mlp, rng);
    Index up = p.global_mlp.back();
    const std::size_t levels = p.stages.size();
    for (std::size_t f = 0; f < p.fp_widths.size(); ++f) {
      // Stage f writes level (levels - f); level 0 uses xyz as its skip.
      const std::size_t level = levels - f;
      const Index skip = level == 0 ? 3 : level_feats[level];
      const Index w = p.fp_widths[f];
      const bool last = f + 1 == p.fp_widths.size();
      fp_.emplace_back(up + skip, std::vector<Index>{w, w}, rng, last);
      up = w;
    }
  }

  EmbeddingMap<Scalar> operator()(const CloudBatch<Scalar>& batch,
                                  const ForwardOptions& opt) {
    const auto& p = config_.pointnetpp;
    const std::size_t n_clouds = batch.coords.size();
    const std::size_t levels = p.stages.size();
    for (std::size_t b = 0; b < n_clouds; ++b) {
      if (batch.coords[b].rows() < p.stages[0].samples) {
        throw std::invalid_argument(
            "pointnetpp stage sa0: cloud " + std::to_string(b) + " has " +
            std::to_string(batch.coords[b].rows()) + " points, needs at least " +
            std::to_string(p.stages[0].samples));
      }
    }

    // xyz[level][cloud]
    std::vector<std::vector<MatrixX<Scalar>>> xyz(levels + 1);
    xyz[0] = batch.coords;
    std::vector<Tensor<Scalar>> feats(levels + 1);

    for (std::size_t l = 0; l < levels; ++l) {
      const auto& stage = p.stages[l];
      const Index k = stage.neighbors;
      std::vector<MatrixX<Scalar>> rel_parts;
      std::vector<Index> rows;
      Index prev_offset = 0;
      xyz[l + 1].resize(n_clouds);
      for (std::size_t b = 0; b < n_clouds; ++b) {
        const auto& prev = xyz[l][b];
        const Index start = detail::FpsStart(opt, b, l, prev.rows());
        const IndexSet centers = farthest_point_sample(prev, stage.samples, start);
        MatrixX<Scalar> cxyz(stage.samples, 3);
        for (Index c = 0; c < stage.samples; ++c) {
          cxyz.row(c) = prev.row(centers[static_cast<std::size_t>(c)]);
        }
        const IndexTable groups = ball_query(cxyz, prev, stage.radius, k);
        MatrixX<Scalar> rel(stage.samples * k, 3);
        for (Index c = 0; c < stage.samples; ++c) {
          for (Index j = 0; j < k; ++j) {
            rel.row(c * k + j) = prev.row(groups(c, j)) - cxyz.row(c);
            rows.push_back(prev_offset + groups(c, j));
          }
        }
        rel_parts.push_back(std::move(rel));
        xyz[l + 1][b] = std::move(cxyz);
        prev_offset += prev.rows();
      }
      Tensor<Scalar> input(detail::StackRows(rel_parts));
      if (l > 0) input = concat<Scalar>({input, gather_rows(feats[l], rows)}, 1);
      feats[l + 1] = max_groups(sa_[l](input, opt.training), k);
    }

    // Global stage: one feature vector per cloud.
    Tensor<Scalar> global_in = concat<Scalar>(
        {Tensor<Scalar>(detail::StackRows(xyz[levels])), feats[levels]}, 1);
    const Index m_last = p.stages.back().samples;
    Tensor<Scalar> global =
        max_groups(global_(global_in, opt.training), m_last);

    std::vector<Index> owner;
    for (std::size_t b = 0; b < n_clouds; ++b) {
      for (Index c = 0; c < m_last; ++c) owner.push_back(static_cast<Index>(b));
    }
    Tensor<Scalar> up = fp_[0](
        concat<Scalar>({feats[levels], gather_rows(global, owner)}, 1),
        opt.training);

    for (std::size_t f = 1; f <= levels; ++f) {
      const std::size_t target = levels - f;
      InterpolationWeights merged;
      merged.neighbors.cols = 3;
      Index src_offset = 0;
      for (std::size_t b = 0; b < n_clouds; ++b) {
        InterpolationWeights w =
            interpolation_weights(xyz[target][b], xyz[target + 1][b]);
        for (Index v : w.neighbors.data) merged.neighbors.data.push_back(v + src_offset);
        merged.weights.insert(merged.weights.end(), w.weights.begin(),
                              w.weights.end());
        merged.neighbors.rows += w.neighbors.rows;
        src_offset += xyz[target + 1][b].rows();
      }
      Tensor<Scalar> interp = interpolate_features(up, merged);
      Tensor<Scalar> skip = target == 0
                                ? Tensor<Scalar>(detail::StackRows(xyz[0]))
                                : feats[target];
      up = fp_[f](concat<Scalar>({interp, skip}, 1), opt.training);
    }
    return {up, batch.offsets()};
  }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    for (std::size_t i = 0; i < sa_.size(); ++i) {
      sa_[i].Collect(prefix + ".sa" + std::to_string(i), out);
    }
    global_.Collect(prefix + ".global", out);
    for (std::size_t i = 0; i < fp_.size(); ++i) {
      fp_[i].Collect(prefix + ".fp" + std::to_string(i), out);
    }
  }
  void CollectBuffers(const std::string& prefix, BufferList<Scalar>& out) {
    for (std::size_t i = 0; i < sa_.size(); ++i) {
      sa_[i].CollectBuffers(prefix + ".sa" + std::to_string(i), out);
    }
    global_.CollectBuffers(prefix + ".global", out);
    for (std::size_t i = 0; i < fp_.size(); ++i) {
      fp_[i].CollectBuffers(prefix + ".fp" + std::to_string(i), out);
    }
  }

 private:
  BackboneConfig config_;
  std::vector<SharedMlp<Scalar>> sa_;
  SharedMlp<Scalar> global_;
  std::vector<SharedMlp<Scalar>> fp_;
};

// Edge features concat(f_i, f_j - f_i) for each point i and each of its k
// neighbors j (found in the current feature space, per cloud). Rows are
// ordered point-major: row i*k + s holds neighbor s of point i.
template <typename Scalar>
Tensor<Scalar> edge_features(const Tensor<Scalar>& feats,
                             const std::vector<Index>& offsets, Index k) {
  std::vector<Index> center_rows, neighbor_rows;
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
    const Index begin = offsets[b], n = offsets[b + 1] - offsets[b];
    if (k >= n) {
      throw std::invalid_argument("dgcnn: k=" + std::to_string(k) +
                                  " must be smaller than the point count " +
                                  std::to_string(n));
    }
    const auto block = feats.value().middleRows(begin, n);
    const IndexTable nn = knn(block, block, k);
    for (Index i = 0; i < n; ++i) {
      for (Index s = 0; s < k; ++s) {
        center_rows.push_back(begin + i);
        neighbor_rows.push_back(begin + nn(i, s));
      }
    }
  }
  Tensor<Scalar> center = gather_rows(feats, center_rows);
  Tensor<Scalar> neighbor = gather_rows(feats, neighbor_rows);
  return concat<Scalar>({center, sub(neighbor, center)}, 1);
}

template <typename Scalar>
class EdgeConv {
 public:
  EdgeConv() = default;
  template <typename Rng>
  EdgeConv(Index in, Index width, Index k, Rng& rng)
      : k_(k), mlp_(2 * in, {width}, rng) {}

  Tensor<Scalar> operator()(const Tensor<Scalar>& feats,
                            const std::vector<Index>& offsets, bool training) {
    return max_groups(mlp_(edge_features(feats, offsets, k_), training), k_);
  }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    mlp_.Collect(prefix, out);
  }
  void CollectBuffers(const std::string& prefix, BufferList<Scalar>& out) {
    mlp_.CollectBuffers(prefix, out);
  }

 private:
  Index k_ = 20;
  SharedMlp<Scalar> mlp_;
};

template <typename Scalar>
class Dgcnn {
 public:
  Dgcnn() = default;
  template <typename Rng>
  Dgcnn(const BackboneConfig& config, Rng& rng) : config_(config) {
    config.Validate();
    Index in = 3, total = 0;
    for (Index w : config.dgcnn.edge_widths) {
      blocks_.emplace_back(in, w, config.dgcnn.k, rng);
      in = w;
      total += w;
    }
    head_ = SharedMlp<Scalar>(
        total, {config.embed_dim, config.embed_dim}, rng, /*linear_last=*/true);
  }

  EmbeddingMap<Scalar> operator()(const CloudBatch<Scalar>& batch,
                                  const ForwardOptions& opt) {
    const auto offsets = batch.offsets();
    Tensor<Scalar> x(detail::StackRows(batch.coords));
    std::vector<Tensor<Scalar>> outs;
    for (auto& block : blocks_) {
      x = block(x, offsets, opt.training);
      outs.push_back(x);
    }
    return {head_(concat(outs, 1), opt.training), offsets};
  }

  std::vector<EdgeConv<Scalar>>& blocks() { return blocks_; }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].Collect(prefix + ".edge" + std::to_string(i), out);
    }
    head_.Collect(prefix + ".head", out);
  }
  void CollectBuffers(const std::string& prefix, BufferList<Scalar>& out) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].CollectBuffers(prefix + ".edge" + std::to_string(i), out);
    }
    head_.CollectBuffers(prefix + ".head", out);
  }

 private:
  BackboneConfig config_;
  std::vector<EdgeConv<Scalar>> blocks_;
  SharedMlp<Scalar> head_;
};

// Either backbone behind one interface.
template <typename Scalar>
class Backbone {
 public:
  Backbone() = default;
  template <typename Rng>
  Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
    if (config.kind == BackboneKind::kPointNetPP) {
      pointnet_ = PointNetPP<Scalar>(config, rng);
    } else {
      dgcnn_ = Dgcnn<Scalar>(config, rng);
    }
  }

  EmbeddingMap<Scalar> operator()(const CloudBatch<Scalar>& batch,
                                  const ForwardOptions& opt) {
    return config_.kind == BackboneKind::kPointNetPP ? pointnet_(batch, opt)
                                                     : dgcnn_(batch, opt);
  }

  const BackboneConfig& config() const { return config_; }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    if (config_.kind == BackboneKind::kPointNetPP) {
      pointnet_.Collect(prefix, out);
    } else {
      dgcnn_.Collect(prefix, out);
    }
  }
  void CollectBuffers(const std::string& prefix, BufferList<Scalar>& out) {
    if (config_.kind == BackboneKind::kPointNetPP) {
      pointnet_.CollectBuffers(prefix, out);
    } else {
      dgcnn_.CollectBuffers(prefix, out);
    }
  }

 private:
  BackboneConfig config_;
  PointNetPP<Scalar> pointnet_;
  Dgcnn<Scalar> dgcnn_;
};

}  // namespace protoform

#endif  // PROTOFORM_BACKBONES_BACKBONE_HPP_
