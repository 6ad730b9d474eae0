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

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>

#include <gtest/gtest.h>

#include "protoform/data/dataset.hpp"
#include "protoform/data/synthetic.hpp"

namespace protoform {
namespace {

namespace fs = std::filesystem;

std::string TempPath(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "protoform_data_test";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string Slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

PointCloud RandomCloud(Index s, Index a, std::uint64_t seed, const std::string& id) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f), p(0.0f, 1.0f);
  PointCloud c;
  c.coords.resize(s, 3);
  c.scores.resize(s, a);
  for (Index i = 0; i < c.coords.size(); ++i) c.coords.data()[i] = u(rng);
  for (Index i = 0; i < c.scores.size(); ++i) c.scores.data()[i] = p(rng);
  c.shape_id = id;
  c.category = "thing";
  return c;
}

DatasetManifest BenchmarkManifest() {
  DatasetManifest m;
  for (int i = 0; i < 18; ++i) m.affordances.push_back("aff" + std::to_string(i));
  m.points_per_shape = 2048;
  m.split = "val";
  return m;
}

TEST(PcadTest, RoundTripIsBitExact) {
  std::vector<PointCloud> clouds{RandomCloud(2048, 18, 1, "a"),
                                 RandomCloud(2048, 18, 2, "b"),
                                 RandomCloud(2048, 18, 3, "c")};
  const auto path = TempPath("roundtrip.pcad");
  write_pcad(clouds, BenchmarkManifest(), path);
  PcadReader reader(path);
  ASSERT_EQ(reader.size(), 3);
  EXPECT_EQ(reader.manifest().split, "val");
  EXPECT_EQ(reader.manifest().affordances.size(), 18u);
  for (Index i = 2; i >= 0; --i) {  // out of order: random access
    const auto c = reader.read(i);
    EXPECT_EQ(c.shape_id, clouds[i].shape_id);
    EXPECT_EQ(std::memcmp(c.coords.data(), clouds[i].coords.data(), 4 * 2048 * 3), 0);
    EXPECT_EQ(std::memcmp(c.scores.data(), clouds[i].scores.data(), 4 * 2048 * 18), 0);
  }
  EXPECT_THROW(reader.read(3), std::out_of_range);
}

TEST(PcadTest, OneShapeFileSizeFollowsLayout) {
  const auto path = TempPath("one.pcad");
  write_pcad({RandomCloud(2048, 18, 4, "x")}, BenchmarkManifest(), path);
  const std::string bytes = Slurp(path);
  ASSERT_GE(bytes.size(), 12u);
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i) {
    header_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  }
  EXPECT_EQ(bytes.substr(0, 4), "PCAD");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes.size(), 12u + header_len + 2048u * (3 + 18) * 4);
}

TEST(PcadTest, EmptyDatasetIsValid) {
  const auto path = TempPath("empty.pcad");
  write_pcad({}, BenchmarkManifest(), path);
  PcadReader reader(path);
  EXPECT_EQ(reader.size(), 0);
}

TEST(PcadTest, TruncationReportsByteOffset) {
  const auto path = TempPath("trunc.pcad");
  write_pcad({RandomCloud(64, 2, 5, "a"), RandomCloud(64, 2, 6, "b")},
             [] {
               DatasetManifest m;
               m.affordances = {"x", "y"};
               m.points_per_shape = 64;
               return m;
             }(),
             path);
  const std::string bytes = Slurp(path);
  const std::string cut = TempPath("trunc_cut.pcad");
  {
    std::ofstream f(cut, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
  }
  try {
    PcadReader reader(cut);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("byte " + std::to_string(bytes.size() - 10)), std::string::npos) << msg;
    EXPECT_NE(msg.find("shape 1"), std::string::npos) << msg;
  }
  {
    std::ofstream f(cut, std::ios::binary);
    f.write(bytes.data(), 20);
  }
  EXPECT_THROW(PcadReader{cut}, DataError);
}

TEST(PcadTest, BadMagicAndVersion) {
  const auto path = TempPath("bad.pcad");
  write_pcad({}, BenchmarkManifest(), path);
  std::string bytes = Slurp(path);
  std::string bad = bytes;
  bad[0] = 'X';
  {
    std::ofstream f(path, std::ios::binary);
    f << bad;
  }
  try {
    PcadReader r(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("magic at byte 0"), std::string::npos);
  }
  bad = bytes;
  bad[4] = 2;
  {
    std::ofstream f(path, std::ios::binary);
    f << bad;
  }
  try {
    PcadReader r(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 4"), std::string::npos);
  }
}

TEST(PcadTest, InconsistentScoreWidthRejected) {
  DatasetManifest m;
  m.affordances = {"a", "b"};
  m.points_per_shape = 64;
  EXPECT_THROW(write_pcad({RandomCloud(64, 3, 1, "z")}, m, TempPath("w.pcad")), DataError);
}

TEST(PcadTest, TransformsSurviveRoundTrip) {
  DatasetManifest m;
  m.affordances = {"a"};
  m.points_per_shape = 64;
  m.transforms = {ShapeTransform{{0.5, -1.0, 2.0}, 3.25}};
  const auto path = TempPath("tf.pcad");
  write_pcad({RandomCloud(64, 1, 9, "t")}, m, path);
  PcadReader r(path);
  ASSERT_TRUE(r.manifest().transforms[0].has_value());
  EXPECT_EQ(r.manifest().transforms[0]->scale, 3.25);
  EXPECT_EQ(r.manifest().transforms[0]->centroid[2], 2.0);
}

TEST(PcadTest, DataDirResolvesRelativePaths) {
  const auto path = TempPath("rel.pcad");
  write_pcad({}, BenchmarkManifest(), path);
  ::setenv("PROTOFORM_DATA_DIR", fs::path(path).parent_path().c_str(), 1);
  EXPECT_EQ(ResolveDataPath("rel.pcad"), path);
  EXPECT_EQ(LoadDataset("rel.pcad").clouds.size(), 0u);
  ::unsetenv("PROTOFORM_DATA_DIR");
}

TEST(TargetsTest, AllZeroRowIsBackground) {
  PointCloud c;
  c.coords = MatrixX<float>::Zero(1, 3);
  c.scores = MatrixX<float>::Zero(1, 4);
  const auto t = make_targets(c, TargetMode::kMulticlass);
  EXPECT_EQ(t.hard[0], 4);
  EXPECT_EQ(t.binary(0, 4), 1);
  EXPECT_EQ(t.raw(0, 4), 1.0f);
}

TEST(TargetsTest, OverlappingScoresPerMode) {
  PointCloud c;
  c.coords = MatrixX<float>::Zero(1, 3);
  c.scores.resize(1, 3);
  c.scores << 0.9f, 0.7f, 0.1f;  // sittable, support, grasp
  const auto mc = make_targets(c, TargetMode::kMulticlass);
  EXPECT_EQ(mc.hard[0], 0);
  EXPECT_EQ(mc.binary.row(0).sum(), 1);
  const auto ml = make_targets(c, TargetMode::kMultilabel);
  EXPECT_EQ(ml.binary(0, 0), 1);
  EXPECT_EQ(ml.binary(0, 1), 1);
  EXPECT_EQ(ml.binary(0, 2), 0);
  EXPECT_TRUE(ml.hard.empty());
  EXPECT_EQ(ml.binary.cols(), 3);
}

TEST(TargetsTest, BinarizationIsIdempotent) {
  PointCloud c;
  c.coords = MatrixX<float>::Zero(3, 3);
  c.scores.resize(3, 2);
  c.scores << 0.2f, 0.6f, 0.5f, 0.49f, 1.0f, 0.0f;
  const auto once = make_targets(c, TargetMode::kMultilabel);
  PointCloud again = c;
  again.scores = once.binary.cast<float>();
  EXPECT_EQ(make_targets(again, TargetMode::kMultilabel).binary, once.binary);
}

TEST(SyntheticTest, SameSeedIsBitIdentical) {
  SyntheticConfig cfg;
  cfg.shapes = 12;
  cfg.points_per_shape = 128;
  const auto a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  const auto pa = TempPath("syn_a.pcad"), pb = TempPath("syn_b.pcad");
  write_pcad(a.clouds, a.manifest, pa);
  write_pcad(b.clouds, b.manifest, pb);
  EXPECT_EQ(Slurp(pa), Slurp(pb));
  cfg.seed = 8;
  const auto c = generate_synthetic(cfg);
  EXPECT_NE(c.clouds[0].coords, a.clouds[0].coords);
}

TEST(SyntheticTest, CloudsAreNormalizedAndHard) {
  SyntheticConfig cfg;
  cfg.shapes = 8;
  const auto d = generate_synthetic(cfg);
  for (const auto& c : d.clouds) {
    EXPECT_EQ(c.size(), 256);
    EXPECT_NEAR(c.coords.rowwise().norm().maxCoeff(), 1.0f, 1e-5f);
    EXPECT_LT(c.coords.colwise().mean().norm(), 1e-5f);
    EXPECT_TRUE((c.scores.array() == 0.0f || c.scores.array() == 1.0f).all());
  }
}

TEST(SyntheticTest, EveryChairIsAtLeastFivePercentSittable) {
  SyntheticConfig cfg;
  cfg.shapes = 100;
  const auto d = generate_synthetic(cfg);
  int chairs = 0;
  for (const auto& c : d.clouds) {
    if (c.category != "chair") continue;
    ++chairs;
    EXPECT_GE(c.scores.col(0).mean(), 0.05f) << c.shape_id;
  }
  EXPECT_EQ(chairs, 34);  // chair, mug, table in rotation
}

TEST(SyntheticTest, UnknownClassRejected) {
  SyntheticConfig cfg;
  cfg.classes = {"sittable", "pourable"};
  EXPECT_THROW(generate_synthetic(cfg), DataError);
  cfg.classes = {"sittable"};
  cfg.points_per_shape = 32;
  EXPECT_THROW(generate_synthetic(cfg), DataError);
}

// Surface area of a part from its parameters, written independently of the
// generator.
double OracleArea(const Part& p) {
  const double pi = std::numbers::pi;
  auto len = [](const std::array<double, 3>& v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  };
  switch (p.kind) {
    case PartKind::kRect:
      return (2 * len(p.u)) * (2 * len(p.v));
    case PartKind::kCylinder:
      return (2 * pi * p.u[0]) * p.v[0];
    case PartKind::kDisk:
      return pi * p.u[0] * p.u[0];
    case PartKind::kTorusArc:
      // Pappus: tube circumference times distance travelled by its centroid.
      return (2 * pi * p.u[1]) * (p.u[0] * (p.v[1] - p.v[0]));
  }
  return 0.0;
}

TEST(SyntheticTest, LabelFractionsMatchPartAreaRatios) {
  const std::vector<std::string> classes{"sittable", "contain", "grasp", "support",
                                         "openable"};
  const auto cats = SyntheticCategories(classes);
  std::mt19937_64 rng(11);
  std::map<std::string, double> expected, observed;
  for (int i = 0; i < 100; ++i) {
    const auto obj = ComposeObject(cats[i % cats.size()], false, rng);
    double total = 0.0;
    std::map<std::string, double> labeled;
    for (const auto& p : obj.parts) {
      total += OracleArea(p);
      for (const auto& l : p.labels) labeled[l] += OracleArea(p);
    }
    for (const auto& [l, a] : labeled) expected[l] += a / total;
    const auto cloud = SampleObject(obj, 256, classes, 0.0, rng);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      observed[classes[c]] += cloud.scores.col(static_cast<Index>(c)).mean();
    }
  }
  for (const auto& l : classes) {
    ASSERT_GT(expected[l], 0.0) << l;
    EXPECT_NEAR(observed[l] / expected[l], 1.0, 0.2) << l;
  }
}

TEST(SyntheticTest, OverlapMakesSeatsSupport) {
  SyntheticConfig cfg;
  cfg.shapes = 4;
  cfg.overlap = true;
  const auto d = generate_synthetic(cfg);
  const auto& chair = d.clouds[0];
  ASSERT_EQ(chair.category, "chair");
  for (Index i = 0; i < chair.size(); ++i) {
    EXPECT_EQ(chair.scores(i, 0), chair.scores(i, 3));
  }
}

TEST(SyntheticTest, SmoothingSoftensBoundaries) {
  SyntheticConfig cfg;
  cfg.shapes = 1;
  cfg.smoothing_sigma = 0.05;
  const auto d = generate_synthetic(cfg);
  const auto& s = d.clouds[0].scores;
  EXPECT_TRUE(((s.array() > 0.0f) && (s.array() < 1.0f)).any());
  EXPECT_LE(s.maxCoeff(), 1.0f);
}

}  // namespace
}  // namespace protoform
