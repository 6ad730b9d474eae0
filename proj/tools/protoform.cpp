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

// protoform: synth | train | eval | explain | ablate | inspect.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or file
// error, 3 non-finite value during training. Failures print one JSON line
// {"error": kind, "code": n, "message": text} to stderr.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11/CLI11.hpp>
#include <nlohmann/json.hpp>

#include "protoform/data/dataset.hpp"
#include "protoform/data/synthetic.hpp"
#include "protoform/explain/explain.hpp"
#include "protoform/train/config.hpp"
#include "protoform/train/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using protoform::Index;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int Report(const char* kind, int code, const std::string& message) {
  std::cerr << json{{"error", kind}, {"code", code}, {"message", message}}.dump() << '\n';
  return code;
}

json ReadJsonFile(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

void WriteJson(const fs::path& path, const json& j) { WriteText(path, j.dump(2) + "\n"); }

protoform::Dataset Load(const std::string& path) {
  return protoform::LoadDataset(protoform::ResolveDataPath(path));
}

std::string RequireString(const json& j, const char* key) {
  if (!j.contains(key)) return "";
  if (!j[key].is_string()) {
    throw protoform::ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
  return j[key].get<std::string>();
}

// Training run settings: a JSON file mirroring TrainConfig plus
// "train_data", "val_data" and "out". Flags override file values.
struct RunFlags {
  std::string config_path, train_data, val_data, out;
  Index epochs = 0, batch_size = 0, prototypes = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::string backbone, mode;
  bool baseline = false, no_augment = false;
  std::vector<CLI::Option*> opts;

  void Register(CLI::App* app) {
    app->add_option("--config", config_path, "Run config JSON");
    opt("--train", app->add_option("--train", train_data, "Training PCAD file"));
    opt("--val", app->add_option("--val", val_data, "Validation PCAD file"));
    opt("--out", app->add_option("--out", out, "Output directory"));
    opt("--epochs", app->add_option("--epochs", epochs, "Total epochs"));
    opt("--batch-size", app->add_option("--batch-size", batch_size, "Clouds per step"));
    opt("--lr", app->add_option("--lr", lr, "AdamW learning rate"));
    opt("--seed", app->add_option("--seed", seed, "Random seed"));
    opt("--prototypes-per-class",
        app->add_option("--prototypes-per-class", prototypes, "Prototypes per class"));
    opt("--backbone", app->add_option("--backbone", backbone,
                                      "Backbone preset: desk, full, dgcnn-desk, dgcnn"));
    opt("--mode", app->add_option("--mode", mode, "multiclass or multilabel"));
    opt("--baseline", app->add_flag("--baseline", baseline, "Linear head, no prototypes"));
    opt("--no-augment", app->add_flag("--no-augment", no_augment, "Disable augmentation"));
  }

  bool Given(const std::string& name) const {
    for (const auto* o : opts) {
      if (o->get_name() == name) return o->count() > 0;
    }
    return false;
  }

  // Returns the resolved config and snapshot JSON.
  std::pair<protoform::TrainConfig, json> Resolve() {
    const json file = config_path.empty() ? json::object() : ReadJsonFile(config_path);
    if (!file.is_object()) throw protoform::ConfigError("run config must be a JSON object");
    protoform::TrainConfig c =
        protoform::TrainConfigFromJson(file, {"train_data", "val_data", "out"});
    if (!Given("--train")) train_data = RequireString(file, "train_data");
    if (!Given("--val")) val_data = RequireString(file, "val_data");
    if (!Given("--out")) out = RequireString(file, "out");
    if (Given("--epochs")) c.epochs = epochs;
    if (Given("--batch-size")) c.batch_size = batch_size;
    if (Given("--lr")) c.lr = lr;
    if (Given("--seed")) c.seed = seed;
    if (Given("--prototypes-per-class")) c.model.prototypes_per_class = prototypes;
    if (Given("--backbone")) c.model.backbone = protoform::BackbonePreset(backbone);
    if (Given("--mode")) c.model.mode = protoform::HeadModeFromString(mode);
    if (Given("--baseline")) c.model.baseline = baseline;
    if (Given("--no-augment")) c.augment.enabled = !no_augment;
    c.Validate();
    if (train_data.empty()) throw UsageError("no training data (--train or train_data)");
    if (out.empty()) throw UsageError("no output directory (--out or out)");
    json snapshot = protoform::ToJson(c);
    snapshot["train_data"] = train_data;
    snapshot["val_data"] = val_data;
    snapshot["out"] = out;
    return {c, snapshot};
  }

 private:
  void opt(const char*, CLI::Option* o) { opts.push_back(o); }
};

std::vector<Index> ParseIndices(const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<Index>(v));
    } catch (const std::logic_error&) {
      throw UsageError("expected comma-separated non-negative integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty index list");
  return out;
}

std::function<void(const json&)> JsonlLogger(std::ofstream& log) {
  return [&log](const json& j) {
    log << j.dump() << '\n';
    log.flush();
    if (j.value("event", "") == "epoch") {
      std::cout << "epoch " << j["epoch"].get<Index>() << " loss "
                << j["loss"]["total"].get<double>();
      const json& val = j["val"];
      if (val.is_object() && val["mean"]["iou"].is_number()) {
        std::cout << " val_miou " << val["mean"]["iou"].get<double>();
      }
      std::cout << '\n';
    }
  };
}

int CmdSynth(protoform::SyntheticConfig c, const std::string& classes, const std::string& out,
             const std::string& name) {
  if (!classes.empty()) {
    c.classes.clear();
    std::stringstream ss(classes);
    std::string item;
    while (std::getline(ss, item, ',')) c.classes.push_back(item);
  }
  if (c.shapes < 1 || c.points_per_shape < 1) {
    throw UsageError("--shapes and --points must be >= 1");
  }
  const auto data = protoform::generate_synthetic(c);
  fs::create_directories(out);
  const std::string file = name.empty() ? c.split + ".pcad" : name;
  protoform::write_pcad(data.clouds, data.manifest, (fs::path(out) / file).string());
  WriteJson(fs::path(out) / (fs::path(file).stem().string() + ".config.json"),
            {{"command", "synth"},
             {"seed", c.seed},
             {"shapes", c.shapes},
             {"points", c.points_per_shape},
             {"classes", c.classes},
             {"overlap", c.overlap},
             {"smoothing", c.smoothing_sigma},
             {"split", c.split},
             {"stream", c.stream},
             {"out", out},
             {"name", file}});
  std::cout << (fs::path(out) / file).string() << ": " << c.shapes << " shapes, "
            << c.points_per_shape << " points, " << c.classes.size() << " affordances\n";
  return kOk;
}

int CmdTrain(RunFlags& flags, const std::string& resume) {
  auto [config, snapshot] = flags.Resolve();
  const auto train = Load(flags.train_data);
  std::optional<protoform::Dataset> val;
  if (!flags.val_data.empty()) val = Load(flags.val_data);

  protoform::Trainer trainer = resume.empty()
                                   ? protoform::Trainer(config, train.manifest.affordances)
                                   : protoform::Trainer::Load(resume);
  trainer.CheckAffordances(train.manifest);
  if (val) trainer.CheckAffordances(val->manifest);
  if (!resume.empty()) {
    json resolved = protoform::ToJson(trainer.config());
    for (const char* k : {"train_data", "val_data", "out"}) resolved[k] = snapshot[k];
    resolved["resume"] = resume;
    snapshot = resolved;
  }

  const fs::path out(flags.out);
  fs::create_directories(out);
  WriteJson(out / "resolved_config.json", snapshot);
  std::ofstream log(out / "log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  protoform::FitOptions options;
  options.out_dir = out;
  options.log = JsonlLogger(log);
  const auto result = trainer.Fit(train.clouds, val ? &val->clouds : nullptr, options);
  std::cout << "best_epoch " << result.best_epoch;
  if (result.best_val_miou) std::cout << " best_val_miou " << *result.best_val_miou;
  std::cout << "\ncheckpoint " << (out / "best.pfck").string() << '\n';
  return kOk;
}

int CmdEval(const std::string& checkpoint, const std::string& data, const std::string& out) {
  protoform::Trainer trainer = protoform::Trainer::Load(checkpoint);
  const auto dataset = Load(data);
  const auto report = trainer.Evaluate(dataset);
  std::cout << report.ToTable();
  if (!out.empty()) {
    fs::create_directories(out);
    WriteJson(fs::path(out) / "report.json", report.ToJson());
    WriteText(fs::path(out) / "report.txt", report.ToTable());
    WriteJson(fs::path(out) / "resolved_config.json",
              {{"command", "eval"}, {"checkpoint", checkpoint}, {"data", data}, {"out", out}});
  }
  return kOk;
}

int CmdExplain(const std::string& checkpoint, const std::string& data, std::string pool,
               const std::string& shapes, Index k, const std::string& class_name,
               const std::string& out) {
  protoform::Trainer trainer = protoform::Trainer::Load(checkpoint);
  if (trainer.model().baseline()) {
    throw UsageError("checkpoint " + checkpoint + " is a baseline model without prototypes");
  }
  if (k < 1) throw UsageError("--k must be >= 1");
  if (!class_name.empty()) {
    const auto names = trainer.class_names();
    if (std::find(names.begin(), names.end(), class_name) == names.end()) {
      throw UsageError("unknown class '" + class_name + "'");
    }
  }
  const auto targets = Load(data);
  trainer.CheckAffordances(targets.manifest);
  if (pool.empty()) pool = data;
  const auto exemplars = pool == data ? targets : Load(pool);
  trainer.CheckAffordances(exemplars.manifest);

  std::vector<protoform::PointCloud> selected;
  for (Index i : ParseIndices(shapes)) {
    if (i >= static_cast<Index>(targets.clouds.size())) {
      throw protoform::DataError("shape index " + std::to_string(i) + " out of range (" +
                                 std::to_string(targets.clouds.size()) + " shapes)");
    }
    selected.push_back(targets.clouds[static_cast<std::size_t>(i)]);
  }
  const fs::path dir(out);
  const json manifest = protoform::explain::ExportExplanations(trainer, selected, exemplars.clouds,
                                                              k, dir, class_name);
  WriteJson(dir / "prototypes.json", protoform::explain::PrototypeBankJson(trainer));
  WriteJson(dir / "resolved_config.json", {{"command", "explain"},
                                            {"checkpoint", checkpoint},
                                            {"data", data},
                                            {"exemplar_data", pool},
                                            {"shapes", shapes},
                                            {"k", k},
                                            {"class", class_name},
                                            {"out", out}});
  for (const auto& e : manifest["explanations"]) {
    std::cout << e["shape_id"].get<std::string>() << ": class "
              << e["explained_class"].get<std::string>() << ", prototype "
              << e["prototype"].get<Index>() << " -> " << e["ply"].get<std::string>() << '\n';
  }
  return kOk;
}

int CmdAblate(RunFlags& flags, const std::string& counts) {
  auto [config, snapshot] = flags.Resolve();
  if (flags.val_data.empty()) throw UsageError("ablate needs validation data (--val)");
  const std::vector<Index> ks = ParseIndices(counts);
  snapshot["counts"] = ks;
  const auto train = Load(flags.train_data);
  const auto val = Load(flags.val_data);
  if (val.manifest.affordances != train.manifest.affordances) {
    throw protoform::DataError("affordance list mismatch between train and val data");
  }
  const fs::path out(flags.out);
  fs::create_directories(out);
  WriteJson(out / "resolved_config.json", snapshot);
  std::ofstream log(out / "log.jsonl");
  protoform::FitOptions options;
  options.log = [&log](const json& j) { log << j.dump() << '\n'; };
  const auto rows = protoform::ablate_prototypes(config, train.manifest.affordances, train.clouds,
                                                 val.clouds, ks, options);
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"prototypes_per_class", r.prototypes_per_class},
                 {"parameters", r.parameters},
                 {"report", r.report.ToJson()}});
  }
  WriteJson(out / "ablation.json", j);
  const std::string table = protoform::AblationTable(rows);
  WriteText(out / "ablation.txt", table);
  std::cout << table;
  return kOk;
}

int CmdInspect(const std::string& checkpoint, bool as_json) {
  protoform::Trainer trainer = protoform::Trainer::Load(checkpoint);
  const auto& model = trainer.model();
  Index backbone = 0, prototypes = 0, head = 0;
  for (const auto& p : model.Parameters()) {
    if (p.name.rfind("backbone", 0) == 0) {
      backbone += p.tensor.size();
    } else if (p.name.rfind("prototypes", 0) == 0) {
      prototypes += p.tensor.size();
    } else {
      head += p.tensor.size();
    }
  }
  const auto names = trainer.class_names();
  json table = json::array();
  if (!model.baseline()) {
    const auto& bank = model.bank();
    const auto sigma = bank.sigma_values();
    for (Index p = 0; p < bank.size(); ++p) {
      const int c = bank.class_ids()[static_cast<std::size_t>(p)];
      table.push_back({{"prototype", p},
                       {"class", c == protoform::kSharedPrototype
                                     ? std::string("shared")
                                     : names[static_cast<std::size_t>(c)]},
                       {"mu", bank.mu().value()(0, p)},
                       {"sigma", sigma[static_cast<std::size_t>(p)]}});
    }
  }
  const json info = {
      {"checkpoint", checkpoint},
      {"format_version", protoform::kCheckpointVersion},
      {"epoch", trainer.epoch()},
      {"best_val_miou", trainer.best_val_miou() ? json(*trainer.best_val_miou()) : json()},
      {"mode", protoform::ToString(trainer.config().model.mode)},
      {"baseline", model.baseline()},
      {"backbone", protoform::ToJson(trainer.config().model.backbone)},
      {"affordances", trainer.affordances()},
      {"classes", names.size()},
      {"parameters",
       {{"total", model.ParameterCount()},
        {"backbone", backbone},
        {"prototypes", prototypes},
        {"head", head}}},
      {"prototypes", table.size()},
      {"prototypes_per_class", trainer.config().model.prototypes_per_class},
      {"prototype_table", table}};
  if (as_json) {
    std::cout << info.dump(2) << '\n';
    return kOk;
  }
  std::printf("checkpoint      %s\n", checkpoint.c_str());
  std::printf("format_version  %u\n", protoform::kCheckpointVersion);
  std::printf("epoch           %lld\n", static_cast<long long>(trainer.epoch()));
  if (trainer.best_val_miou()) {
    std::printf("best_val_miou   %.6f\n", *trainer.best_val_miou());
  } else {
    std::printf("best_val_miou   none\n");
  }
  std::printf("mode            %s%s\n", info["mode"].get<std::string>().c_str(),
              model.baseline() ? " (baseline)" : "");
  std::printf("backbone        %s, embed_dim %lld\n",
              info["backbone"]["kind"].get<std::string>().c_str(),
              static_cast<long long>(trainer.config().model.backbone.embed_dim));
  std::printf("classes         %zu\n", names.size());
  std::printf("parameters      %lld (backbone %lld, prototypes %lld, head %lld)\n",
              static_cast<long long>(model.ParameterCount()), static_cast<long long>(backbone),
              static_cast<long long>(prototypes), static_cast<long long>(head));
  std::printf("prototypes      %zu (%lld per class)\n", table.size(),
              static_cast<long long>(trainer.config().model.prototypes_per_class));
  if (!table.empty()) {
    std::printf("\n%5s  %-20s %9s %9s\n", "id", "class", "mu", "sigma");
    for (const auto& row : table) {
      std::printf("%5lld  %-20s %9.5f %9.5f\n", static_cast<long long>(row["prototype"].get<Index>()),
                  row["class"].get<std::string>().c_str(), row["mu"].get<double>(),
                  row["sigma"].get<double>());
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based point cloud affordance segmentation"};
  app.require_subcommand(1);

  protoform::SyntheticConfig synth_cfg;
  std::string synth_classes, synth_out, synth_name;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic PCAD dataset");
  synth->add_option("--seed", synth_cfg.seed, "Generator seed");
  synth->add_option("--shapes", synth_cfg.shapes, "Number of shapes");
  synth->add_option("--points", synth_cfg.points_per_shape, "Points per shape");
  synth->add_option("--classes", synth_classes, "Comma-separated affordance names");
  synth->add_flag("--overlap", synth_cfg.overlap, "Seats also afford support");
  synth->add_option("--smoothing", synth_cfg.smoothing_sigma, "Soft label boundary width");
  synth->add_option("--split", synth_cfg.split, "Split tag (train or val)");
  synth->add_option("--stream", synth_cfg.stream, "Independent stream index");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--name", synth_name, "File name (default <split>.pcad)");

  RunFlags train_flags;
  std::string resume;
  auto* train = app.add_subcommand("train", "Train a model");
  train_flags.Register(train);
  train->add_option("--resume", resume, "Continue from a checkpoint");

  std::string eval_ckpt, eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "PCAD file")->required();
  eval->add_option("--out", eval_out, "Output directory for report.json and report.txt");

  std::string ex_ckpt, ex_data, ex_pool, ex_shapes = "0", ex_class, ex_out;
  Index ex_k = 3;
  auto* explain = app.add_subcommand("explain", "Export explanations of shapes");
  explain->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  explain->add_option("--data", ex_data, "PCAD file with the shapes to explain")->required();
  explain->add_option("--exemplars", ex_pool, "PCAD file searched for exemplars (default --data)");
  explain->add_option("--shapes", ex_shapes, "Comma-separated shape indices");
  explain->add_option("--k", ex_k, "Exemplars per prototype");
  explain->add_option("--class", ex_class, "Class to explain (default: most predicted)");
  explain->add_option("--out", ex_out, "Output directory")->required();

  RunFlags ablate_flags;
  std::string counts = "1,3,5,10";
  auto* ablate = app.add_subcommand("ablate", "Compare prototype counts per class");
  ablate_flags.Register(ablate);
  ablate->add_option("--counts", counts, "Comma-separated prototypes-per-class values");

  std::string inspect_ckpt;
  bool inspect_json = false;
  auto* inspect = app.add_subcommand("inspect", "Print checkpoint metadata and prototypes");
  inspect->add_option("checkpoint", inspect_ckpt, "Checkpoint file")->required();
  inspect->add_flag("--json", inspect_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return Report("usage", kUsage, e.what());
  }

  try {
    if (*synth) return CmdSynth(synth_cfg, synth_classes, synth_out, synth_name);
    if (*train) return CmdTrain(train_flags, resume);
    if (*eval) return CmdEval(eval_ckpt, eval_data, eval_out);
    if (*explain) {
      return CmdExplain(ex_ckpt, ex_data, ex_pool, ex_shapes, ex_k, ex_class, ex_out);
    }
    if (*ablate) return CmdAblate(ablate_flags, counts);
    if (*inspect) return CmdInspect(inspect_ckpt, inspect_json);
  } catch (const protoform::NumericalError& e) {
    return Report("numerical", kNumerical, "tensor " + e.tensor() + ": " + e.what());
  } catch (const UsageError& e) {
    return Report("usage", kUsage, e.what());
  } catch (const protoform::ConfigError& e) {
    return Report("config", kUsage, e.what());
  } catch (const protoform::DataError& e) {
    return Report("data", kData, e.what());
  } catch (const protoform::CheckpointError& e) {
    return Report("checkpoint", kData, e.what());
  } catch (const std::invalid_argument& e) {
    return Report("usage", kUsage, e.what());
  } catch (const std::exception& e) {
    return Report("io", kData, e.what());
  }
  return Report("usage", kUsage, "no subcommand");
}
