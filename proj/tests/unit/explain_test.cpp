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
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "protoform/data/synthetic.hpp"
#include "protoform/explain/explain.hpp"

namespace protoform::explain {
namespace {

namespace fs = std::filesystem;

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("protoform_explain_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string ReadBytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Dataset Data(Index shapes, bool overlap = false) {
  SyntheticConfig c;
  c.seed = 5;
  c.shapes = shapes;
  c.points_per_shape = 96;
  c.overlap = overlap;
  return generate_synthetic(c);
}

Trainer MakeTrainer(const Dataset& data, HeadMode mode = HeadMode::kMulticlass,
                    bool baseline = false) {
  TrainConfig c;
  c.batch_size = 4;
  c.seed = 9;
  c.model.mode = mode;
  c.model.baseline = baseline;
  Trainer t(c, data.manifest.affordances);
  t.Step({data.clouds[0], data.clouds[1]});
  return t;
}

// Truncated normal density on [-1, 1] from its textbook definition.
double Density(double s, double mu, double sigma) {
  const auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  const double z = (s - mu) / sigma;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return pdf / (sigma * (cdf((1.0 - mu) / sigma) - cdf((-1.0 - mu) / sigma)));
}

// Activation of prototype p at every point of `cloud`, recomputed from the
// embeddings and the bank's raw parameters.
std::vector<double> OracleActivations(Trainer& t, const PointCloud& cloud, Index p) {
  const Inference inf = t.Infer({cloud});
  const auto& bank = t.model().bank();
  const auto a = bank.anchors().value().row(p).cast<double>();
  const double mu = bank.mu().value()(0, p);
  const double rho = bank.rho().value()(0, p);
  const double sigma = std::log1p(std::exp(rho)) + bank.sigma_min();
  std::vector<double> out;
  for (Index i = 0; i < inf.embeddings.rows(); ++i) {
    const auto z = inf.embeddings.row(i).cast<double>();
    const double s = z.dot(a) / std::max(z.norm() * a.norm(), 1e-8);
    out.push_back(Density(std::clamp(s, -1.0, 1.0), mu, sigma));
  }
  return out;
}

TEST(ExplainTest, ActivationMapPicksTheMostActivePrototypeOfTheClass) {
  const auto data = Data(6);
  Trainer t = MakeTrainer(data);
  const auto names = t.class_names();
  for (std::size_t c = 0; c < names.size(); ++c) {
    const ActivationMap m = activation_map(t, data.clouds[2], names[c]);
    EXPECT_EQ(m.class_id, static_cast<int>(c));
    ASSERT_EQ(static_cast<Index>(m.values.size()), data.clouds[2].size());

    Index best = -1;
    double best_max = -1.0;
    for (Index p = 0; p < t.model().bank().size(); ++p) {
      if (t.model().bank().class_ids()[static_cast<std::size_t>(p)] != static_cast<int>(c)) {
        continue;
      }
      const auto v = OracleActivations(t, data.clouds[2], p);
      const double mx = *std::max_element(v.begin(), v.end());
      if (mx > best_max) {
        best_max = mx;
        best = p;
      }
    }
    EXPECT_EQ(m.prototype, best);
    const auto oracle = OracleActivations(t, data.clouds[2], best);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_NEAR(m.values[i], oracle[i], 1e-4 * std::max(1.0, oracle[i]));
    }
  }
}

TEST(ExplainTest, UnknownClassAndBaselineAreRejected) {
  const auto data = Data(3);
  Trainer t = MakeTrainer(data);
  EXPECT_THROW(activation_map(t, data.clouds[0], "fly"), std::invalid_argument);
  Trainer base = MakeTrainer(data, HeadMode::kMulticlass, true);
  EXPECT_THROW(activation_map(base, data.clouds[0], data.manifest.affordances[0]),
               std::invalid_argument);
  EXPECT_THROW(nearest_exemplars(base, data.clouds, 2), std::invalid_argument);
}

TEST(ExplainTest, NearestExemplarsMatchAFullScan) {
  const auto data = Data(7);
  Trainer t = MakeTrainer(data);
  const Index k = 3;
  const auto ex = nearest_exemplars(t, data.clouds, k);
  ASSERT_EQ(static_cast<Index>(ex.size()), t.model().bank().size());

  std::vector<MatrixX<float>> acts;
  for (const auto& c : data.clouds) acts.push_back(t.Infer({c}).activations);
  for (const auto& pe : ex) {
    ASSERT_EQ(static_cast<Index>(pe.exemplars.size()), k);
    std::vector<std::pair<double, Index>> per_shape;
    for (std::size_t s = 0; s < acts.size(); ++s) {
      per_shape.emplace_back(acts[s].col(pe.prototype).maxCoeff(), static_cast<Index>(s));
    }
    std::sort(per_shape.begin(), per_shape.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Index> shapes;
    for (std::size_t r = 0; r < pe.exemplars.size(); ++r) {
      const Exemplar& e = pe.exemplars[r];
      EXPECT_DOUBLE_EQ(e.activation, per_shape[r].first);
      EXPECT_EQ(e.shape_id, data.clouds[static_cast<std::size_t>(e.shape_index)].shape_id);
      EXPECT_EQ(acts[static_cast<std::size_t>(e.shape_index)](e.point, pe.prototype),
                static_cast<float>(e.activation));
      if (r > 0) EXPECT_GE(pe.exemplars[r - 1].activation, e.activation);
      shapes.push_back(e.shape_index);
    }
    std::sort(shapes.begin(), shapes.end());
    EXPECT_EQ(std::adjacent_find(shapes.begin(), shapes.end()), shapes.end());
  }
  EXPECT_THROW(nearest_exemplars(t, {}, 2), std::invalid_argument);
}

TEST(ExplainTest, KLargerThanTheDatasetReturnsEveryShape) {
  const auto data = Data(2);
  Trainer t = MakeTrainer(data);
  for (const auto& pe : nearest_exemplars(t, data.clouds, 5)) {
    EXPECT_EQ(pe.exemplars.size(), 2u);
  }
}

TEST(ExplainTest, BundleRoundTripsThroughJson) {
  const auto data = Data(4);
  Trainer t = MakeTrainer(data);
  const auto ex = nearest_exemplars(t, data.clouds, 2);
  const ExplanationBundle b = explain(t, data.clouds[3], ex);
  EXPECT_EQ(b.shape_id, data.clouds[3].shape_id);
  EXPECT_EQ(static_cast<Index>(b.predicted.size()), data.clouds[3].size());
  const auto names = t.class_names();
  EXPECT_EQ(b.class_index, static_cast<Index>(
      std::find(names.begin(), names.end(), b.explained_class) - names.begin()));
  const auto j = b.ToJson();
  EXPECT_EQ(ExplanationBundle::FromJson(j).ToJson(), j);
  EXPECT_TRUE(j["top_prototype"]["class_id"].is_number_integer());
}

TEST(ExplainTest, DefaultClassIsTheMostPredictedAffordance) {
  const auto data = Data(4);
  Trainer t = MakeTrainer(data);
  const auto b = explain(t, data.clouds[1], {});
  const auto names = t.class_names();
  std::vector<int> counts(names.size(), 0);
  for (int c : b.predicted) ++counts[static_cast<std::size_t>(c)];
  const std::size_t background = names.size() - 1;
  std::size_t expected = background;
  for (std::size_t c = 0; c < background; ++c) {
    if (counts[c] > 0 && (expected == background || counts[c] > counts[expected])) expected = c;
  }
  EXPECT_EQ(b.explained_class, names[expected]);
  EXPECT_EQ(explain(t, data.clouds[1], {}, names[0]).explained_class, names[0]);
}

TEST(ExplainTest, MultilabelPrototypesAreShared) {
  const auto data = Data(4, true);
  Trainer t = MakeTrainer(data, HeadMode::kMultilabel);
  const auto b = explain(t, data.clouds[0], nearest_exemplars(t, data.clouds, 1));
  const auto j = b.ToJson();
  EXPECT_EQ(j["top_prototype"]["class_id"], "shared");
  for (const auto& p : j["prototypes"]) EXPECT_EQ(p["class_id"], "shared");
  EXPECT_EQ(ExplanationBundle::FromJson(j).map.class_id, kSharedPrototype);
}

TEST(ExplainTest, BankJsonListsEveryPrototype) {
  const auto data = Data(2);
  Trainer t = MakeTrainer(data);
  const auto j = PrototypeBankJson(t);
  const auto& bank = t.model().bank();
  ASSERT_EQ(static_cast<Index>(j["prototypes"].size()), bank.size());
  for (Index p = 0; p < bank.size(); ++p) {
    const auto& e = j["prototypes"][static_cast<std::size_t>(p)];
    EXPECT_EQ(e["class_id"].get<int>(), bank.class_ids()[static_cast<std::size_t>(p)]);
    EXPECT_EQ(static_cast<Index>(e["anchor"].size()), bank.dim());
    EXPECT_FLOAT_EQ(e["mu"].get<float>(), bank.mu().value()(0, p));
  }
}

TEST(ExplainTest, ViridisEndpointsAndMonotoneLuminance) {
  // Reference endpoints of the published colormap: #440154 and #fde725.
  const auto lo = Viridis(0), hi = Viridis(255);
  EXPECT_NEAR(lo[0], 0x44, 3);
  EXPECT_NEAR(lo[1], 0x01, 3);
  EXPECT_NEAR(lo[2], 0x54, 3);
  EXPECT_NEAR(hi[0], 0xfd, 3);
  EXPECT_NEAR(hi[1], 0xe7, 3);
  EXPECT_NEAR(hi[2], 0x25, 3);
  for (std::size_t i = 1; i < 256; ++i) {
    EXPECT_GE(Viridis(i)[1] + 1, Viridis(i - 1)[1]);
  }
}

struct PlyVertex {
  double x, y, z, v;
  int r, g, b;
};

std::vector<PlyVertex> ReadPly(const fs::path& p, Index* declared) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "ply");
  std::getline(f, line);
  EXPECT_EQ(line, "format ascii 1.0");
  while (std::getline(f, line) && line != "end_header") {
    if (line.rfind("element vertex ", 0) == 0) *declared = std::stol(line.substr(15));
  }
  std::vector<PlyVertex> out;
  PlyVertex v{};
  while (f >> v.x >> v.y >> v.z >> v.v >> v.r >> v.g >> v.b) out.push_back(v);
  return out;
}

TEST(ExplainTest, PlyCarriesCoordinatesFieldAndColors) {
  const auto dir = TempDir("ply");
  MatrixX<float> coords(4, 3);
  coords << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  const std::vector<float> field = {0.5f, 2.0f, 1.25f, 0.5f};
  export_ply(coords, field, dir / "a.ply");
  Index declared = 0;
  const auto verts = ReadPly(dir / "a.ply", &declared);
  ASSERT_EQ(declared, 4);
  ASSERT_EQ(verts.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(verts[i].x, coords(static_cast<Index>(i), 0));
    EXPECT_EQ(verts[i].v, field[i]);
  }
  const auto lo = Viridis(0), hi = Viridis(255), mid = Viridis(128);
  EXPECT_EQ(verts[0].r, lo[0]);
  EXPECT_EQ(verts[0].b, lo[2]);
  EXPECT_EQ(verts[1].g, hi[1]);
  EXPECT_EQ(verts[2].g, mid[1]);  // (1.25 - 0.5) / 1.5 * 255 = 127.5
  EXPECT_EQ(verts[3].g, lo[1]);

  const std::vector<float> flat(4, 3.0f);
  export_ply(coords, flat, dir / "flat.ply");
  const auto fv = ReadPly(dir / "flat.ply", &declared);
  for (const auto& v : fv) {
    EXPECT_EQ(v.r, fv[0].r);
    EXPECT_EQ(v.g, fv[0].g);
    EXPECT_EQ(v.b, fv[0].b);
  }
  EXPECT_THROW(export_ply(coords, std::vector<float>(3, 0.0f), dir / "bad.ply"),
               std::invalid_argument);
}

TEST(ExplainTest, ExportIsByteIdenticalAcrossRuns) {
  const auto data = Data(4);
  Trainer t = MakeTrainer(data);
  const std::vector<PointCloud> targets = {data.clouds[0], data.clouds[2]};
  const auto a = TempDir("export_a"), b = TempDir("export_b");
  const auto manifest = ExportExplanations(t, targets, data.clouds, 2, a);
  ExportExplanations(t, targets, data.clouds, 2, b);
  ASSERT_EQ(manifest["explanations"].size(), 2u);
  for (const auto& e : manifest["explanations"]) {
    for (const char* key : {"bundle", "ply"}) {
      const std::string name = e[key];
      ASSERT_TRUE(fs::exists(a / name)) << name;
      EXPECT_EQ(ReadBytes(a / name), ReadBytes(b / name)) << name;
    }
    const auto bundle = nlohmann::json::parse(ReadBytes(a / e["bundle"].get<std::string>()));
    EXPECT_EQ(bundle["shape_id"], e["shape_id"]);
  }
  EXPECT_EQ(ReadBytes(a / "manifest.json"), ReadBytes(b / "manifest.json"));
}

}  // namespace
}  // namespace protoform::explain
