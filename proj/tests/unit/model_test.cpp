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

#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "../support/gradcheck.hpp"
#include "../support/suites.hpp"
#include "protoform/backbones/backbone.hpp"
#include "protoform/train/model.hpp"

namespace protoform {
namespace {

MatrixX<double> UnitCubeCloud(Index n, std::mt19937_64& rng) {
  return testing::RandomMatrix(n, 3, rng, -1.0, 1.0);
}

// Neighbor caps above the point count so ball queries never truncate.
BackboneConfig UncappedPointNet() {
  BackboneConfig c;
  c.embed_dim = 16;
  c.pointnetpp.stages = {{16, 0.6, 256, {8, 16}}, {6, 1.2, 256, {16, 16}}};
  c.pointnetpp.global_mlp = {16, 32};
  c.pointnetpp.fp_widths = {16, 16, 16};
  return c;
}

// Sets batch-norm running statistics to non-trivial values so evaluation
// mode exercises them.
template <typename Scalar>
void PerturbBuffers(Backbone<Scalar>& b, std::mt19937_64& rng) {
  BufferList<Scalar> buffers;
  b.CollectBuffers("b", buffers);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& nb : buffers) {
    for (Index i = 0; i < nb.buffer->size(); ++i) (*nb.buffer)(i) = static_cast<Scalar>(u(rng));
  }
}

TEST(BackboneTest, FullPointNetGives128DimsOn2048Points) {
  std::mt19937_64 rng(1);
  Backbone<float> b(BackboneConfig{}, rng);
  CloudBatch<float> batch;
  batch.coords.push_back(UnitCubeCloud(2048, rng).cast<float>());
  const auto out = b(batch, ForwardOptions{});
  EXPECT_EQ(out.features.rows(), 2048);
  EXPECT_EQ(out.features.cols(), 128);
  EXPECT_TRUE(out.features.value().allFinite());
}

TEST(BackboneTest, PointNetPermutationEquivariance) {
  std::mt19937_64 rng(2);
  Backbone<double> b(UncappedPointNet(), rng);
  PerturbBuffers(b, rng);
  const MatrixX<double> cloud = UnitCubeCloud(48, rng);
  std::vector<Index> perm(48);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  MatrixX<double> permuted(48, 3);
  Index start = 0;
  for (Index i = 0; i < 48; ++i) {
    permuted.row(i) = cloud.row(perm[i]);
    if (perm[i] == 0) start = i;
  }
  CloudBatch<double> a, p;
  a.coords = {cloud};
  p.coords = {permuted};
  ForwardOptions pa;
  pa.first_stage_start = {start};
  const auto fa = b(a, ForwardOptions{}).features.value();
  const auto fp = b(p, pa).features.value();
  for (Index i = 0; i < 48; ++i) {
    EXPECT_LT((fp.row(i) - fa.row(perm[i])).cwiseAbs().maxCoeff(), 1e-9) << "row " << i;
  }
}

TEST(BackboneTest, PointNetDuplicatedPointsKeepEmbeddings) {
  std::mt19937_64 rng(3);
  Backbone<double> b(UncappedPointNet(), rng);
  PerturbBuffers(b, rng);
  const MatrixX<double> cloud = UnitCubeCloud(40, rng);
  MatrixX<double> doubled(80, 3);
  doubled << cloud, cloud;
  CloudBatch<double> a, d;
  a.coords = {cloud};
  d.coords = {doubled};
  const auto fa = b(a, ForwardOptions{}).features.value();
  const auto fd = b(d, ForwardOptions{}).features.value();
  EXPECT_LT((fd.topRows(40) - fa).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(BackboneTest, EvaluationModeIsBitDeterministic) {
  std::mt19937_64 rng(4);
  for (auto kind : {BackboneKind::kPointNetPP, BackboneKind::kDgcnn}) {
    BackboneConfig c = BackboneConfig::Desk();
    c.kind = kind;
    Backbone<float> b(c, rng);
    CloudBatch<float> batch;
    batch.coords = {UnitCubeCloud(128, rng).cast<float>()};
    const MatrixX<float> x = b(batch, ForwardOptions{}).features.value();
    const MatrixX<float> y = b(batch, ForwardOptions{}).features.value();
    EXPECT_TRUE(x == y);
    EXPECT_LT(x.cwiseAbs().maxCoeff(), 1e4f);
  }
}

TEST(BackboneTest, DgcnnShapeAndKTooLarge) {
  std::mt19937_64 rng(5);
  BackboneConfig c = BackboneConfig::Desk();
  c.kind = BackboneKind::kDgcnn;
  c.dgcnn.k = 8;
  Backbone<float> b(c, rng);
  CloudBatch<float> batch;
  batch.coords = {UnitCubeCloud(30, rng).cast<float>(), UnitCubeCloud(20, rng).cast<float>()};
  const auto out = b(batch, ForwardOptions{});
  EXPECT_EQ(out.features.rows(), 50);
  EXPECT_EQ(out.features.cols(), 128);
  CloudBatch<float> tiny;
  tiny.coords = {UnitCubeCloud(8, rng).cast<float>()};
  EXPECT_THROW(b(tiny, ForwardOptions{}), std::invalid_argument);
}

TEST(BackboneTest, EdgeFeatureDifferencesAreTranslationInvariant) {
  std::mt19937_64 rng(6);
  const MatrixX<double> cloud = UnitCubeCloud(12, rng);
  MatrixX<double> moved = cloud;
  moved.rowwise() += Eigen::RowVector3d(0.3, -2.0, 5.0);
  const std::vector<Index> offsets{0, 12};
  const auto e0 = edge_features(Tensor<double>(cloud), offsets, 4).value();
  const auto e1 = edge_features(Tensor<double>(moved), offsets, 4).value();
  EXPECT_LT((e0.rightCols(3) - e1.rightCols(3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BackboneTest, EdgeConvMatchesNaiveLoop) {
  std::mt19937_64 rng(7);
  const Index n = 5, k = 2, width = 4;
  EdgeConv<double> conv(3, width, k, rng);
  BufferList<double> buffers;
  conv.CollectBuffers("e", buffers);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& b : buffers) {
    for (Index i = 0; i < b.buffer->size(); ++i) (*b.buffer)(i) = u(rng);
  }
  ParamList<double> params;
  conv.Collect("e", params);
  ASSERT_EQ(params.size(), 3u);  // linear weight, bn gamma, bn beta
  for (auto& p : params) p.tensor.mutable_value() = testing::RandomMatrix(p.tensor.rows(), p.tensor.cols(), rng, -1, 1);
  const MatrixX<double>& w = params[0].tensor.value();
  const MatrixX<double>& gamma = params[1].tensor.value();
  const MatrixX<double>& beta = params[2].tensor.value();
  const MatrixX<double>& rmean = *buffers[0].buffer;
  const MatrixX<double>& rvar = *buffers[1].buffer;

  const MatrixX<double> x = UnitCubeCloud(n, rng);
  const auto out = conv(Tensor<double>(x), {0, n}, /*training=*/false).value();
  for (Index i = 0; i < n; ++i) {
    // k nearest by brute force, self included at distance 0.
    std::vector<std::pair<double, Index>> d;
    for (Index j = 0; j < n; ++j) d.push_back({(x.row(j) - x.row(i)).squaredNorm(), j});
    std::sort(d.begin(), d.end());
    for (Index c = 0; c < width; ++c) {
      double best = -1e300;
      for (Index s = 0; s < k; ++s) {
        const Index j = d[s].second;
        double h = 0.0;
        for (Index q = 0; q < 3; ++q) {
          h += x(i, q) * w(q, c) + (x(j, q) - x(i, q)) * w(3 + q, c);
        }
        h = (h - rmean(0, c)) / std::sqrt(rvar(0, c) + 1e-5) * gamma(0, c) + beta(0, c);
        best = std::max(best, std::max(h, 0.0));
      }
      EXPECT_NEAR(out(i, c), best, 1e-5) << "point " << i << " channel " << c;
    }
  }
}

// Float analytic gradients against double central differences on 10 random
// parameter entries.
void CheckBackboneGradient(BackboneConfig config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Backbone<float> bf(config, rng);
  std::mt19937_64 rng_copy(seed);
  Backbone<double> bd(config, rng_copy);
  const MatrixX<double> cloud = UnitCubeCloud(16, rng);
  const MatrixX<double> weights = testing::RandomMatrix(16, config.embed_dim, rng, -1, 1);
  CloudBatch<float> cf;
  cf.coords = {cloud.cast<float>()};
  CloudBatch<double> cd;
  cd.coords = {cloud};

  ParamList<float> pf;
  bf.Collect("b", pf);
  ParamList<double> pd;
  bd.Collect("b", pd);
  for (std::size_t i = 0; i < pf.size(); ++i) {
    pd[i].tensor.mutable_value() = pf[i].tensor.value().cast<double>();
  }
  ForwardOptions opt;
  opt.training = true;
  opt.first_stage_start = {0};
  Tensor<float> lf = sum(mul(bf(cf, opt).features, Tensor<float>(weights.cast<float>())));
  lf.backward();

  auto loss_d = [&] {
    BufferList<double> buffers;
    bd.CollectBuffers("b", buffers);
    std::vector<MatrixX<double>> saved;
    for (auto& b : buffers) saved.push_back(*b.buffer);
    NoGradGuard guard;
    const double v = sum(mul(bd(cd, opt).features, Tensor<double>(weights))).item();
    for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].buffer = saved[i];
    return v;
  };
  std::uniform_int_distribution<std::size_t> pick_param(0, pf.size() - 1);
  int checked = 0, attempts = 0;
  while (checked < 10 && attempts < 200) {
    ++attempts;
    const std::size_t p = pick_param(rng);
    std::uniform_int_distribution<Index> pick_entry(0, pf[p].tensor.size() - 1);
    const Index e = pick_entry(rng);
    if (!pf[p].tensor.has_grad()) continue;
    const double analytic = pf[p].tensor.grad()(e);
    double& w = pd[p].tensor.mutable_value()(e);
    const double keep = w, h = 1e-5;
    w = keep + h;
    const double up = loss_d();
    w = keep - h;
    const double down = loss_d();
    w = keep;
    const double numeric = (up - down) / (2 * h);
    EXPECT_LE(std::abs(analytic - numeric), 1e-2 * std::abs(numeric) + 1e-3)
        << pf[p].name << "[" << e << "] analytic " << analytic << " numeric " << numeric;
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

TEST(BackboneTest, PointNetGradientMatchesFiniteDifferences) {
  BackboneConfig c;
  c.embed_dim = 8;
  c.pointnetpp.stages = {{8, 0.8, 8, {8, 8}}, {4, 1.5, 8, {8}}};
  c.pointnetpp.global_mlp = {8};
  c.pointnetpp.fp_widths = {8, 8, 8};
  CheckBackboneGradient(c, 11);
}

TEST(BackboneTest, DgcnnGradientMatchesFiniteDifferences) {
  BackboneConfig c;
  c.kind = BackboneKind::kDgcnn;
  c.embed_dim = 8;
  c.dgcnn.k = 4;
  c.dgcnn.edge_widths = {8, 8};
  CheckBackboneGradient(c, 12);
}

TEST(ModelTest, EndToEndFloatGradientMatchesDoubleDifferences) {
  const auto r = testing::RunEndToEndGradientCheck();
  EXPECT_TRUE(r.passed) << r.Summary();
}

TEST(BackboneTest, ConfigErrorsNameTheStage) {
  BackboneConfig c;
  c.pointnetpp.stages[1].samples = 600;
  try {
    c.Validate();
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("sa1"), std::string::npos) << e.what();
  }
  c = BackboneConfig{};
  c.pointnetpp.fp_widths.back() = 64;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
}

TEST(ModelTest, PrototypeModelShapesAndInit) {
  std::mt19937_64 rng(8);
  ModelConfig mc;
  PrototypeSegmenter<float> m(mc, 5, rng);
  EXPECT_EQ(m.prototype_classes().size(), 15u);
  CloudBatch<float> batch;
  batch.coords = {UnitCubeCloud(128, rng).cast<float>(), UnitCubeCloud(96, rng).cast<float>()};
  const auto out = m.Forward(batch, ForwardOptions{});
  EXPECT_EQ(out.probs.rows(), 224);
  EXPECT_EQ(out.probs.cols(), 5);
  EXPECT_EQ(out.activations.cols(), 15);
  EXPECT_LT((out.probs.value().rowwise().sum().array() - 1.0f).abs().maxCoeff(), 1e-5f);
  EXPECT_EQ(out.offsets, (std::vector<Index>{0, 128, 224}));
}

TEST(ModelTest, BaselineHasNoPrototypes) {
  std::mt19937_64 rng(9);
  ModelConfig mc;
  mc.baseline = true;
  PrototypeSegmenter<float> m(mc, 5, rng);
  EXPECT_TRUE(m.prototype_classes().empty());
  for (const auto& p : m.Parameters()) {
    EXPECT_EQ(p.name.find("prototypes"), std::string::npos) << p.name;
  }
  CloudBatch<float> batch;
  batch.coords = {UnitCubeCloud(128, rng).cast<float>()};
  const auto out = m.Forward(batch, ForwardOptions{});
  EXPECT_FALSE(out.activations.defined());
  EXPECT_EQ(out.probs.cols(), 5);
}

TEST(ModelTest, MultilabelSharesPrototypes) {
  std::mt19937_64 rng(10);
  ModelConfig mc;
  mc.mode = HeadMode::kMultilabel;
  PrototypeSegmenter<float> m(mc, 4, rng);
  for (int c : m.prototype_classes()) EXPECT_EQ(c, -1);
  CloudBatch<float> batch;
  batch.coords = {UnitCubeCloud(128, rng).cast<float>()};
  const auto probs = m.Forward(batch, ForwardOptions{}).probs.value();
  EXPECT_GT(probs.minCoeff(), 0.0f);
  EXPECT_LT(probs.maxCoeff(), 1.0f);
}

TEST(ModelTest, CopyFromDoubleReproducesFloatForward) {
  std::mt19937_64 rng(11);
  ModelConfig mc;
  PrototypeSegmenter<float> mf(mc, 5, rng);
  std::mt19937_64 other(99);
  PrototypeSegmenter<double> md(mc, 5, other);
  md.CopyFrom(mf);
  CloudBatch<float> bf;
  bf.coords = {UnitCubeCloud(128, rng).cast<float>()};
  CloudBatch<double> bd;
  bd.coords = {bf.coords[0].cast<double>()};
  const auto pf = mf.Forward(bf, ForwardOptions{}).probs.value();
  const auto pd = md.Forward(bd, ForwardOptions{}).probs.value();
  EXPECT_LT((pf.cast<double>() - pd).cwiseAbs().maxCoeff(), 1e-4);
}

}  // namespace
}  // namespace protoform
