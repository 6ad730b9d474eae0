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

// Runs the protoform executable as a subprocess.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "protoform/data/dataset.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string ReadBytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("protoform_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  // `args` is appended to the executable path; `env` is prepended.
  RunResult Exec(const std::string& args, const std::string& env = "") {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" +
                            PROTOFORM_CLI_PATH + "' " + args + " > '" + out.string() +
                            "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = ReadBytes(out);
    r.err = ReadBytes(err);
    return r;
  }

  fs::path dir_;
};

// Exactly one stderr line carrying a JSON object with the exit code.
void ExpectReason(const RunResult& r, int code, const std::string& kind) {
  EXPECT_EQ(r.code, code) << r.err;
  ASSERT_FALSE(r.err.empty());
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1) << r.err;
  const json j = json::parse(r.err);
  EXPECT_EQ(j["code"], code);
  EXPECT_EQ(j["error"], kind);
  EXPECT_FALSE(j["message"].get<std::string>().empty());
}

TEST_F(CliTest, SynthIsDeterministic) {
  ASSERT_EQ(Exec("synth --seed 7 --shapes 10 --out a").code, 0);
  ASSERT_EQ(Exec("synth --seed 7 --shapes 10 --out b").code, 0);
  ASSERT_TRUE(fs::exists(dir_ / "a/train.pcad"));
  EXPECT_EQ(ReadBytes(dir_ / "a/train.pcad"), ReadBytes(dir_ / "b/train.pcad"));
  ASSERT_EQ(Exec("synth --seed 8 --shapes 10 --out c").code, 0);
  EXPECT_NE(ReadBytes(dir_ / "a/train.pcad"), ReadBytes(dir_ / "c/train.pcad"));
}

TEST_F(CliTest, TrainEvalTableAndSnapshotRerun) {
  ASSERT_EQ(Exec("synth --shapes 6 --points 96 --out d").code, 0);
  ASSERT_EQ(Exec("synth --shapes 3 --points 96 --split val --stream 1 --out d").code, 0);
  const RunResult t = Exec(
      "train --train d/train.pcad --val d/val.pcad --out run --epochs 2 --batch-size 3");
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"best.pfck", "last.pfck", "log.jsonl", "resolved_config.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  const json snap = json::parse(ReadBytes(dir_ / "run/resolved_config.json"));
  EXPECT_EQ(snap["epochs"], 2);
  EXPECT_EQ(snap["batch_size"], 3);
  EXPECT_EQ(snap["train_data"], "d/train.pcad");

  const RunResult e = Exec("eval --checkpoint run/best.pfck --data d/val.pcad --out ev");
  ASSERT_EQ(e.code, 0) << e.err;
  // Header, rule, 4 affordances + No Label, rule, average.
  std::istringstream lines(e.out);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 9u) << e.out;
  EXPECT_EQ(rows[0].rfind("Affordances", 0), 0u);
  EXPECT_EQ(rows[6].rfind("No Label", 0), 0u);
  EXPECT_EQ(rows[8].rfind("Average", 0), 0u);
  EXPECT_EQ(ReadBytes(dir_ / "ev/report.txt"), e.out);
  EXPECT_EQ(json::parse(ReadBytes(dir_ / "ev/report.json"))["classes"].size(), 5u);

  const RunResult again = Exec("train --config run/resolved_config.json --out run2");
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(ReadBytes(dir_ / "run/best.pfck"), ReadBytes(dir_ / "run2/best.pfck"));
  EXPECT_EQ(ReadBytes(dir_ / "run/last.pfck"), ReadBytes(dir_ / "run2/last.pfck"));
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  ASSERT_EQ(Exec("synth --shapes 4 --points 64 --out d").code, 0);
  std::ofstream(dir_ / "cfg.json")
      << R"({"epochs": 3, "seed": 4, "train_data": "d/train.pcad", "out": "a"})";
  const RunResult r = Exec("train --config cfg.json --epochs 1 --out b --prototypes-per-class 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "a"));
  const json snap = json::parse(ReadBytes(dir_ / "b/resolved_config.json"));
  EXPECT_EQ(snap["epochs"], 1);
  EXPECT_EQ(snap["seed"], 4);
  EXPECT_EQ(snap["model"]["prototypes_per_class"], 2);
}

TEST_F(CliTest, InspectReportsPrototypeCount) {
  // 18 affordances plus background, random scores.
  protoform::DatasetManifest m;
  for (int i = 0; i < 18; ++i) m.affordances.push_back("aff" + std::to_string(i));
  m.points_per_shape = 64;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<protoform::PointCloud> clouds(2);
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    auto& c = clouds[k];
    c.coords = protoform::MatrixX<float>(64, 3);
    c.scores = protoform::MatrixX<float>(64, 18);
    for (Eigen::Index i = 0; i < c.coords.size(); ++i) c.coords.data()[i] = 2 * u(rng) - 1;
    for (Eigen::Index i = 0; i < c.scores.size(); ++i) c.scores.data()[i] = u(rng) < 0.1f;
    c.shape_id = "s" + std::to_string(k);
    c.category = "thing";
    m.shape_ids.push_back(c.shape_id);
    m.categories.push_back(c.category);
  }
  fs::create_directories(dir_ / "d");
  protoform::write_pcad(clouds, m, (dir_ / "d/train.pcad").string());
  ASSERT_EQ(Exec("train --train d/train.pcad --out run --epochs 1 --batch-size 2").code, 0);
  const RunResult r = Exec("inspect run/best.pfck");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("prototypes      57 (3 per class)"), std::string::npos) << r.out;
  const RunResult j = Exec("inspect --json run/best.pfck");
  ASSERT_EQ(j.code, 0);
  const json info = json::parse(j.out);
  EXPECT_EQ(info["prototypes"], 57);
  EXPECT_EQ(info["classes"], 19);
  EXPECT_EQ(info["prototype_table"].size(), 57u);
  EXPECT_EQ(info["prototype_table"][56]["class"], "No Label");
}

TEST_F(CliTest, ExplainWritesIdenticalArtifacts) {
  ASSERT_EQ(Exec("synth --shapes 4 --points 64 --out d").code, 0);
  ASSERT_EQ(Exec("train --train d/train.pcad --out run --epochs 1 --batch-size 2").code, 0);
  for (const char* out : {"x1", "x2"}) {
    const RunResult r = Exec(std::string("explain --checkpoint run/best.pfck --data d/train.pcad "
                                   "--shapes 0,3 --k 2 --out ") + out);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const json manifest = json::parse(ReadBytes(dir_ / "x1/manifest.json"));
  ASSERT_EQ(manifest["explanations"].size(), 2u);
  for (const auto& entry : fs::directory_iterator(dir_ / "x1")) {
    const auto name = entry.path().filename();
    if (name == "resolved_config.json") continue;
    EXPECT_EQ(ReadBytes(entry.path()), ReadBytes(dir_ / "x2" / name)) << name;
  }
  ExpectReason(Exec("explain --checkpoint run/best.pfck --data d/train.pcad --shapes 9 --out x3"),
               2, "data");
  ExpectReason(Exec("explain --checkpoint run/best.pfck --data d/train.pcad --class fly --out x3"),
               1, "usage");
}

TEST_F(CliTest, AblateEmitsOneRowPerCount) {
  ASSERT_EQ(Exec("synth --shapes 4 --points 64 --out d").code, 0);
  ASSERT_EQ(Exec("synth --shapes 2 --points 64 --split val --stream 1 --out d").code, 0);
  const RunResult r = Exec(
      "ablate --train d/train.pcad --val d/val.pcad --out ab --epochs 1 --batch-size 2 "
      "--counts 1,2");
  ASSERT_EQ(r.code, 0) << r.err;
  const json rows = json::parse(ReadBytes(dir_ / "ab/ablation.json"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["prototypes_per_class"], 1);
  EXPECT_EQ(rows[1]["prototypes_per_class"], 2);
  EXPECT_EQ(ReadBytes(dir_ / "ab/ablation.txt"), r.out);
  ExpectReason(Exec("ablate --train d/train.pcad --out ab2 --epochs 1"), 1, "usage");
}

TEST_F(CliTest, DataDirEnvironmentVariableResolvesRelativePaths) {
  ASSERT_EQ(Exec("synth --shapes 2 --points 64 --out data").code, 0);
  const RunResult r = Exec("train --train train.pcad --out run --epochs 1 --batch-size 2",
                     "PROTOFORM_DATA_DIR='" + (dir_ / "data").string() + "'");
  EXPECT_EQ(r.code, 0) << r.err;
  ExpectReason(Exec("train --train train.pcad --out run2 --epochs 1"), 2, "data");
}

TEST_F(CliTest, ExitCodesAndReasons) {
  ExpectReason(Exec(""), 1, "usage");
  ExpectReason(Exec("train --epochs notanumber --train x --out y"), 1, "usage");
  ExpectReason(Exec("train --train missing.pcad --out y"), 2, "data");
  ASSERT_EQ(Exec("synth --shapes 4 --points 64 --out d").code, 0);
  ExpectReason(Exec("train --train d/train.pcad --out y --backbone huge"), 1, "config");
  std::ofstream(dir_ / "bad.json") << R"({"epochs": 1, "model": {"prototypes": 3}})";
  ExpectReason(Exec("train --config bad.json --train d/train.pcad --out y"), 1, "config");
  std::ofstream(dir_ / "junk.pfck") << "PFCK garbage";
  ExpectReason(Exec("inspect junk.pfck"), 2, "checkpoint");
  ExpectReason(Exec("eval --checkpoint junk.pfck --data d/train.pcad"), 2, "checkpoint");

  const RunResult nan = Exec("train --train d/train.pcad --out nan --epochs 2 --batch-size 2 --lr 1e30");
  ExpectReason(nan, 3, "numerical");
  EXPECT_TRUE(fs::exists(dir_ / "nan/last_good.pfck"));
}

}  // namespace
