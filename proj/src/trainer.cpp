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

#include "protoform/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "protoform/geometry/geometry.hpp"

namespace protoform {
namespace {

using nlohmann::json;
using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

TargetMode ToTargetMode(HeadMode mode) {
  return mode == HeadMode::kMulticlass ? TargetMode::kMulticlass
                                       : TargetMode::kMultilabel;
}

void CheckFinite(const MatrixX<float>& m, const std::string& name) {
  if (!m.allFinite()) {
    throw NumericalError(name, "non-finite values in " + name);
  }
}

struct BatchInputs {
  CloudBatch<float> clouds;
  LossTargets targets;
};

BatchInputs Assemble(const std::vector<PointCloud>& batch, TargetMode mode,
                     Index classes) {
  if (batch.empty()) throw std::invalid_argument("trainer: empty batch");
  BatchInputs in;
  std::vector<PointTargets> parts;
  Index rows = 0;
  for (const auto& c : batch) {
    in.clouds.coords.push_back(c.coords);
    parts.push_back(make_targets(c, mode));
    rows += c.size();
  }
  in.targets.offsets = in.clouds.offsets();
  in.targets.binary.resize(rows, classes);
  Index at = 0;
  for (const auto& p : parts) {
    if (p.binary.cols() != classes) {
      throw DataError("trainer: cloud has " + std::to_string(p.binary.cols()) +
                      " target classes, model expects " + std::to_string(classes));
    }
    in.targets.binary.middleRows(at, p.binary.rows()) = p.binary;
    in.targets.hard.insert(in.targets.hard.end(), p.hard.begin(), p.hard.end());
    at += p.binary.rows();
  }
  return in;
}

LossValues& operator+=(LossValues& a, const LossValues& b) {
  a.ce += b.ce;
  a.dice += b.dice;
  a.cluster += b.cluster;
  a.separation += b.separation;
  a.total += b.total;
  return a;
}

LossValues Scaled(LossValues v, double s) {
  v.ce *= s;
  v.dice *= s;
  v.cluster *= s;
  v.separation *= s;
  v.total *= s;
  return v;
}

struct BlockSpec {
  std::string name;
  MatrixX<float>* data;
};

std::vector<BlockSpec> StateBlocks(PrototypeSegmenter<float>& model,
                                   AdamW<float>& optimizer) {
  std::vector<BlockSpec> out;
  auto params = model.Parameters();
  for (auto& p : params) out.push_back({"param:" + p.name, &p.tensor.mutable_value()});
  for (auto& b : model.Buffers()) out.push_back({"buffer:" + b.name, b.buffer});
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam.m:" + params[i].name, &optimizer.first_moments()[i]});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam.v:" + params[i].name, &optimizer.second_moments()[i]});
  }
  return out;
}

}  // namespace

json ToJson(const LossValues& v) {
  return {{"ce", v.ce},
          {"dice", v.dice},
          {"cluster", v.cluster},
          {"separation", v.separation},
          {"total", v.total}};
}

Trainer::Trainer(TrainConfig config, std::vector<std::string> affordances)
    : config_(std::move(config)),
      affordances_(std::move(affordances)),
      mode_(ToTargetMode(config_.model.mode)),
      rng_(config_.seed) {
  config_.Validate();
  if (affordances_.empty()) throw ConfigError("trainer: no affordance classes");
  model_ = PrototypeSegmenter<float>(
      config_.model, static_cast<Index>(class_names().size()), rng_);
  optimizer_ = AdamW<float>(AdamWOptions{config_.lr, config_.weight_decay});
  optimizer_.Init(model_.Parameters());
}

std::vector<std::string> Trainer::class_names() const {
  return ClassNames(affordances_, mode_);
}

StepResult Trainer::Step(const std::vector<PointCloud>& batch, bool random_sampling) {
  const Index classes = model_.num_classes();
  BatchInputs in = Assemble(batch, mode_, classes);
  ForwardOptions fwd;
  fwd.training = true;
  fwd.rng = random_sampling ? &rng_ : nullptr;
  ModelOutput<float> out = model_.Forward(in.clouds, fwd);
  CheckFinite(out.embeddings.value(), "embeddings");
  if (out.activations.defined()) CheckFinite(out.activations.value(), "activations");
  CheckFinite(out.probs.value(), "probs");

  const auto loss = total_loss(out.probs, in.targets,
                               out.activations.defined() ? &out.activations : nullptr,
                               model_.prototype_classes());
  StepResult result;
  result.loss = loss.values();
  const std::pair<const char*, double> parts[] = {
      {"loss.ce", result.loss.ce},
      {"loss.dice", result.loss.dice},
      {"loss.cluster", result.loss.cluster},
      {"loss.separation", result.loss.separation},
      {"loss.total", result.loss.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) throw NumericalError(name, std::string("non-finite ") + name);
  }

  auto params = model_.Parameters();
  for (auto& p : params) p.tensor.zero_grad();
  loss.total.backward();

  double sq = 0.0;
  for (auto& p : params) {
    if (!p.tensor.has_grad()) {
      p.tensor.mutable_grad() = MatrixX<float>::Zero(p.tensor.rows(), p.tensor.cols());
    }
    CheckFinite(p.tensor.grad(), "grad:" + p.name);
    sq += p.tensor.grad().cast<double>().squaredNorm();
  }
  result.grad_norm = std::sqrt(sq);
  if (config_.clip_norm > 0.0 && result.grad_norm > config_.clip_norm) {
    const float s = static_cast<float>(config_.clip_norm / (result.grad_norm + 1e-6));
    for (auto& p : params) p.tensor.mutable_grad() *= s;
  }
  optimizer_.Step(params);
  model_.AfterStep();
  for (auto& p : params) p.tensor.zero_grad();
  return result;
}

EpochSummary Trainer::TrainEpoch(const std::vector<PointCloud>& train,
                                 const FitOptions& options) {
  if (train.empty()) throw DataError("trainer: empty training set");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);
  const AugmentOptions aug{config_.augment.jitter, config_.augment.rotate,
                           config_.augment.shuffle};
  const auto bs = static_cast<std::size_t>(config_.batch_size);
  EpochSummary summary;
  summary.epoch = epoch_ + 1;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<PointCloud> batch;
    for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) {
      batch.push_back(train[order[k]]);
      if (config_.augment.enabled) augment(batch.back().coords, batch.back().scores, aug, rng_);
    }
    const StepResult r = Step(batch);
    summary.loss += r.loss;
    ++steps;
    if (options.log) {
      options.log({{"event", "step"},
                   {"epoch", summary.epoch},
                   {"step", optimizer_.step()},
                   {"loss", ToJson(r.loss)},
                   {"grad_norm", r.grad_norm}});
    }
  }
  summary.loss = Scaled(summary.loss, 1.0 / static_cast<double>(steps));
  ++epoch_;
  return summary;
}

Inference Trainer::Infer(const std::vector<PointCloud>& clouds) {
  NoGradGuard guard;
  Inference result;
  result.offsets.push_back(0);
  std::vector<MatrixX<float>> emb, act, prob;
  const auto bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < clouds.size(); start += bs) {
    CloudBatch<float> batch;
    for (std::size_t k = start; k < std::min(clouds.size(), start + bs); ++k) {
      batch.coords.push_back(clouds[k].coords);
      result.offsets.push_back(result.offsets.back() + clouds[k].size());
    }
    ModelOutput<float> out = model_.Forward(batch, ForwardOptions{});
    emb.push_back(out.embeddings.value());
    if (out.activations.defined()) act.push_back(out.activations.value());
    prob.push_back(out.probs.value());
  }
  auto stack = [](const std::vector<MatrixX<float>>& parts) {
    Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    MatrixX<float> m(rows, parts.empty() ? 0 : parts.front().cols());
    Index at = 0;
    for (const auto& p : parts) {
      m.middleRows(at, p.rows()) = p;
      at += p.rows();
    }
    return m;
  };
  result.embeddings = stack(emb);
  result.activations = stack(act);
  result.probs = stack(prob);
  return result;
}

metrics::EvalReport Trainer::Evaluate(const std::vector<PointCloud>& clouds) {
  metrics::MetricAccumulator acc(class_names());
  const Inference inf = Infer(clouds);
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const Index begin = inf.offsets[i];
    const Index n = inf.offsets[i + 1] - begin;
    const RowMajorF pred = inf.probs.middleRows(begin, n);
    const RowMajorF gt = make_targets(clouds[i], mode_).raw;
    acc.Add(std::span<const float>(pred.data(), static_cast<std::size_t>(pred.size())),
            std::span<const float>(gt.data(), static_cast<std::size_t>(gt.size())), n);
  }
  return acc.Report();
}

void Trainer::CheckAffordances(const DatasetManifest& manifest) const {
  if (manifest.affordances != affordances_) {
    std::string got, want;
    for (const auto& a : manifest.affordances) got += (got.empty() ? "" : ",") + a;
    for (const auto& a : affordances_) want += (want.empty() ? "" : ",") + a;
    throw DataError("affordance list mismatch: dataset has [" + got + "], model has [" +
                    want + "]");
  }
}

metrics::EvalReport Trainer::Evaluate(const Dataset& data) {
  CheckAffordances(data.manifest);
  return Evaluate(data.clouds);
}

FitResult Trainer::Fit(const std::vector<PointCloud>& train,
                       const std::vector<PointCloud>* val, const FitOptions& options) {
  FitResult result;
  const bool files = !options.out_dir.empty();
  if (files) std::filesystem::create_directories(options.out_dir);
  while (epoch_ < config_.epochs) {
    EpochSummary summary;
    try {
      summary = TrainEpoch(train, options);
    } catch (const NumericalError&) {
      // Parameters are only updated after all checks pass, so the current
      // state is the last finite one.
      if (files) Save(options.out_dir / "last_good.pfck");
      throw;
    }
    const bool eval_now = val != nullptr && !val->empty() &&
                          (epoch_ % config_.eval_every == 0 || epoch_ == config_.epochs);
    if (eval_now) {
      summary.val = Evaluate(*val);
      const double miou = summary.val->mean_iou.value_or(0.0);
      if (!best_val_ || miou > *best_val_) {
        best_val_ = miou;
        result.best_epoch = epoch_;
        if (files) Save(options.out_dir / "best.pfck");
      }
    }
    if (options.log) {
      json event = {{"event", "epoch"}, {"epoch", summary.epoch}, {"loss", ToJson(summary.loss)}};
      event["val"] = summary.val ? summary.val->ToJson() : json(nullptr);
      options.log(event);
    }
    if (files) Save(options.out_dir / "last.pfck");
    result.epochs.push_back(std::move(summary));
  }
  if (val == nullptr || val->empty()) {
    result.best_epoch = epoch_;
    if (files) Save(options.out_dir / "best.pfck");
  }
  result.best_val_miou = best_val_;
  return result;
}

void Trainer::Save(const std::filesystem::path& path) const {
  auto& self = const_cast<Trainer&>(*this);
  const auto blocks = StateBlocks(self.model_, self.optimizer_);
  std::ostringstream rng_state;
  rng_state << rng_;
  json tensors = json::array();
  for (const auto& b : blocks) {
    tensors.push_back({{"name", b.name}, {"rows", b.data->rows()}, {"cols", b.data->cols()}});
  }
  const json header = {{"format_version", kCheckpointVersion},
                       {"config", ToJson(config_)},
                       {"affordances", affordances_},
                       {"class_names", class_names()},
                       {"epoch", epoch_},
                       {"best_val_miou", best_val_ ? json(*best_val_) : json(nullptr)},
                       {"optimizer_step", optimizer_.step()},
                       {"rng", rng_state.str()},
                       {"parameter_count", model_.ParameterCount()},
                       {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  binio::PutU32(out, kCheckpointVersion);
  binio::PutU32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& b : blocks) {
    binio::PutFloats(out, b.data->data(), static_cast<std::size_t>(b.data->size()));
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Trainer Trainer::Load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic at byte 0)");
  }
  const std::uint32_t version = binio::GetU32(u + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
  }
  const std::uint32_t len = binio::GetU32(u + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) {
    throw CheckpointError(path.string() + ": truncated header");
  }
  json header;
  try {
    header = json::parse(bytes.substr(12, len));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  Trainer t(TrainConfigFromJson(header.at("config")),
            header.at("affordances").get<std::vector<std::string>>());
  auto blocks = StateBlocks(t.model_, t.optimizer_);
  const json& tensors = header.at("tensors");
  if (tensors.size() != blocks.size()) {
    throw CheckpointError(path.string() + ": expected " + std::to_string(blocks.size()) +
                          " tensors, found " + std::to_string(tensors.size()));
  }
  std::size_t at = 12 + len;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& spec = tensors[i];
    auto& b = blocks[i];
    if (spec.at("name").get<std::string>() != b.name ||
        spec.at("rows").get<Index>() != b.data->rows() ||
        spec.at("cols").get<Index>() != b.data->cols()) {
      throw CheckpointError(path.string() + ": tensor " + std::to_string(i) + " ('" +
                            spec.at("name").get<std::string>() +
                            "') does not match the model ('" + b.name + "')");
    }
    const auto n = static_cast<std::size_t>(b.data->size());
    if (bytes.size() < at + 4 * n) {
      throw CheckpointError(path.string() + ": truncated at byte " +
                            std::to_string(bytes.size()) + " in tensor '" + b.name + "'");
    }
    binio::GetFloats(bytes.data() + at, b.data->data(), n);
    at += 4 * n;
  }
  if (at != bytes.size()) {
    throw CheckpointError(path.string() + ": " + std::to_string(bytes.size() - at) +
                          " trailing bytes");
  }
  t.optimizer_.set_step(header.at("optimizer_step").get<long long>());
  t.epoch_ = header.at("epoch").get<Index>();
  if (!header.at("best_val_miou").is_null()) {
    t.best_val_ = header.at("best_val_miou").get<double>();
  }
  std::istringstream rng_state(header.at("rng").get<std::string>());
  rng_state >> t.rng_;
  if (!rng_state) throw CheckpointError(path.string() + ": bad rng state");
  return t;
}

std::vector<AblationRow> ablate_prototypes(const TrainConfig& base,
                                           const std::vector<std::string>& affordances,
                                           const std::vector<PointCloud>& train,
                                           const std::vector<PointCloud>& val,
                                           const std::vector<Index>& counts,
                                           const FitOptions& options) {
  if (base.model.baseline) throw ConfigError("ablation: baseline has no prototypes");
  std::vector<AblationRow> rows;
  for (const Index k : counts) {
    TrainConfig cfg = base;
    cfg.model.prototypes_per_class = k;
    Trainer trainer(cfg, affordances);
    FitOptions fit = options;
    if (!options.out_dir.empty()) fit.out_dir = options.out_dir / ("k" + std::to_string(k));
    trainer.Fit(train, nullptr, fit);
    rows.push_back({k, trainer.model().ParameterCount(), trainer.Evaluate(val)});
  }
  return rows;
}

std::string AblationTable(const std::vector<AblationRow>& rows) {
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
    return std::string(buf);
  };
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-6s %10s %8s %8s %8s %8s\n", "k", "params", "IOU",
                "AP", "AUC", "MSE");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-6lld %10lld %8s %8s %8s %8.4f\n",
                  static_cast<long long>(r.prototypes_per_class),
                  static_cast<long long>(r.parameters), pct(r.report.mean_iou).c_str(),
                  pct(r.report.mean_ap).c_str(), pct(r.report.mean_auc).c_str(),
                  r.report.mean_mse);
    out += line;
  }
  return out;
}

}  // namespace protoform
