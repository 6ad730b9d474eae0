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

#include "protoform/explain/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace protoform::explain {
namespace {

using nlohmann::json;

const PrototypeBank<float>& BankOf(const Trainer& trainer) {
  if (trainer.model().baseline()) {
    throw std::invalid_argument("explain: baseline model has no prototypes");
  }
  return trainer.model().bank();
}

json ClassIdJson(int class_id) {
  return class_id == kSharedPrototype ? json("shared") : json(class_id);
}

int ClassIdFromJson(const json& j) {
  return j.is_string() ? kSharedPrototype : j.get<int>();
}

Index ClassIndex(const Trainer& trainer, const std::string& name) {
  const auto names = trainer.class_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw std::invalid_argument("explain: unknown class '" + name + "'");
  }
  return static_cast<Index>(it - names.begin());
}

// File-name-safe form of a shape id.
std::string SafeName(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

std::string FormatFloat(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

MatrixX<float> PrototypeActivations(Trainer& trainer, const PointCloud& cloud) {
  BankOf(trainer);
  return trainer.Infer({cloud}).activations;
}

ActivationMap activation_map(Trainer& trainer, const PointCloud& cloud,
                             const std::string& class_name) {
  const auto& bank = BankOf(trainer);
  const Index c = ClassIndex(trainer, class_name);
  const std::vector<Index> candidates = bank.PrototypesOf(static_cast<int>(c));
  const MatrixX<float> act = PrototypeActivations(trainer, cloud);

  Index best = candidates.front();
  float best_value = act.col(best).maxCoeff();
  for (Index p : candidates) {
    const float v = act.col(p).maxCoeff();
    if (v > best_value) {
      best = p;
      best_value = v;
    }
  }
  ActivationMap map;
  map.prototype = best;
  map.class_id = bank.class_ids()[static_cast<std::size_t>(best)];
  map.mu = bank.mu().value()(0, best);
  map.sigma = bank.sigma_values()[static_cast<std::size_t>(best)];
  map.values.resize(static_cast<std::size_t>(act.rows()));
  for (Index i = 0; i < act.rows(); ++i) map.values[static_cast<std::size_t>(i)] = act(i, best);
  return map;
}

std::vector<PrototypeExemplars> nearest_exemplars(Trainer& trainer,
                                                  const std::vector<PointCloud>& train,
                                                  Index k) {
  const auto& bank = BankOf(trainer);
  if (train.empty()) throw std::invalid_argument("nearest_exemplars: empty dataset");
  if (k < 1) throw std::invalid_argument("nearest_exemplars: k must be >= 1");

  const Index p_total = bank.size();
  const auto sigma = bank.sigma_values();
  std::vector<std::vector<Exemplar>> best(static_cast<std::size_t>(p_total));
  for (std::size_t s = 0; s < train.size(); ++s) {
    const MatrixX<float> act = PrototypeActivations(trainer, train[s]);
    for (Index p = 0; p < p_total; ++p) {
      Index point = 0;
      const float v = act.col(p).maxCoeff(&point);
      best[static_cast<std::size_t>(p)].push_back(
          Exemplar{train[s].shape_id, static_cast<Index>(s), point, v});
    }
  }

  std::vector<PrototypeExemplars> out;
  for (Index p = 0; p < p_total; ++p) {
    auto& list = best[static_cast<std::size_t>(p)];
    std::stable_sort(list.begin(), list.end(), [](const Exemplar& a, const Exemplar& b) {
      return a.activation > b.activation;
    });
    if (static_cast<Index>(list.size()) > k) list.resize(static_cast<std::size_t>(k));
    out.push_back(PrototypeExemplars{p, bank.class_ids()[static_cast<std::size_t>(p)],
                                     bank.mu().value()(0, p),
                                     sigma[static_cast<std::size_t>(p)], std::move(list)});
  }
  return out;
}

ExplanationBundle explain(Trainer& trainer, const PointCloud& cloud,
                          const std::vector<PrototypeExemplars>& exemplars,
                          const std::string& class_name) {
  BankOf(trainer);
  const auto names = trainer.class_names();
  const Inference inf = trainer.Infer({cloud});

  ExplanationBundle b;
  b.shape_id = cloud.shape_id;
  std::vector<Index> counts(names.size(), 0);
  for (Index i = 0; i < inf.probs.rows(); ++i) {
    Index c = 0;
    inf.probs.row(i).maxCoeff(&c);
    b.predicted.push_back(static_cast<int>(c));
    ++counts[static_cast<std::size_t>(c)];
  }

  if (class_name.empty()) {
    const bool has_background = trainer.target_mode() == TargetMode::kMulticlass;
    const std::size_t n_aff = names.size() - (has_background ? 1 : 0);
    std::size_t pick = n_aff;
    for (std::size_t c = 0; c < n_aff; ++c) {
      if (counts[c] > 0 && (pick == n_aff || counts[c] > counts[pick])) pick = c;
    }
    if (pick == n_aff) pick = has_background ? n_aff : 0;
    b.explained_class = names[pick];
  } else {
    b.explained_class = class_name;
  }
  b.class_index = ClassIndex(trainer, b.explained_class);
  b.map = activation_map(trainer, cloud, b.explained_class);
  b.prototypes = exemplars;
  return b;
}

json ExplanationBundle::ToJson() const {
  json protos = json::array();
  for (const auto& pe : prototypes) {
    json ex = json::array();
    for (const auto& e : pe.exemplars) {
      ex.push_back({{"shape_id", e.shape_id},
                    {"shape_index", e.shape_index},
                    {"point", e.point},
                    {"activation", e.activation},
                    {"mu", pe.mu},
                    {"sigma", pe.sigma}});
    }
    protos.push_back({{"prototype", pe.prototype},
                      {"class_id", ClassIdJson(pe.class_id)},
                      {"mu", pe.mu},
                      {"sigma", pe.sigma},
                      {"exemplars", std::move(ex)}});
  }
  return {{"shape_id", shape_id},
          {"explained_class", explained_class},
          {"class_index", class_index},
          {"predicted", predicted},
          {"top_prototype",
           {{"prototype", map.prototype},
            {"class_id", ClassIdJson(map.class_id)},
            {"mu", map.mu},
            {"sigma", map.sigma},
            {"activation", map.values}}},
          {"prototypes", std::move(protos)}};
}

ExplanationBundle ExplanationBundle::FromJson(const json& j) {
  ExplanationBundle b;
  b.shape_id = j.at("shape_id").get<std::string>();
  b.explained_class = j.at("explained_class").get<std::string>();
  b.class_index = j.at("class_index").get<Index>();
  b.predicted = j.at("predicted").get<std::vector<int>>();
  const json& top = j.at("top_prototype");
  b.map.prototype = top.at("prototype").get<Index>();
  b.map.class_id = ClassIdFromJson(top.at("class_id"));
  b.map.mu = top.at("mu").get<double>();
  b.map.sigma = top.at("sigma").get<double>();
  b.map.values = top.at("activation").get<std::vector<float>>();
  for (const json& pj : j.at("prototypes")) {
    PrototypeExemplars pe;
    pe.prototype = pj.at("prototype").get<Index>();
    pe.class_id = ClassIdFromJson(pj.at("class_id"));
    pe.mu = pj.at("mu").get<double>();
    pe.sigma = pj.at("sigma").get<double>();
    for (const json& ej : pj.at("exemplars")) {
      pe.exemplars.push_back(Exemplar{ej.at("shape_id").get<std::string>(),
                                      ej.at("shape_index").get<Index>(),
                                      ej.at("point").get<Index>(),
                                      ej.at("activation").get<double>()});
    }
    b.prototypes.push_back(std::move(pe));
  }
  return b;
}

json PrototypeBankJson(const Trainer& trainer) {
  const auto& bank = BankOf(trainer);
  const auto sigma = bank.sigma_values();
  const auto names = trainer.class_names();
  json protos = json::array();
  for (Index p = 0; p < bank.size(); ++p) {
    const int c = bank.class_ids()[static_cast<std::size_t>(p)];
    const auto& a = bank.anchors().value();
    std::vector<float> anchor(static_cast<std::size_t>(a.cols()));
    for (Index d = 0; d < a.cols(); ++d) anchor[static_cast<std::size_t>(d)] = a(p, d);
    protos.push_back({{"prototype", p},
                      {"class_id", ClassIdJson(c)},
                      {"class_name", c == kSharedPrototype
                                         ? std::string("shared")
                                         : names[static_cast<std::size_t>(c)]},
                      {"mu", bank.mu().value()(0, p)},
                      {"sigma", sigma[static_cast<std::size_t>(p)]},
                      {"anchor", std::move(anchor)}});
  }
  return {{"prototypes_per_class", bank.per_class()},
          {"dim", bank.dim()},
          {"sigma_min", bank.sigma_min()},
          {"class_names", names},
          {"prototypes", std::move(protos)}};
}

std::array<std::uint8_t, 3> Viridis(std::size_t bin) {
  // matplotlib's viridis sampled at 256 evenly spaced points.
  static constexpr std::uint8_t kTable[256][3] = {
    {68, 1, 84}, {68, 2, 86}, {69, 4, 87}, {69, 5, 89}, {70, 7, 90}, {70, 8, 92},
    {70, 10, 93}, {70, 11, 94}, {71, 13, 96}, {71, 14, 97}, {71, 16, 99}, {71, 17, 100},
    {71, 19, 101}, {72, 20, 103}, {72, 22, 104}, {72, 23, 105}, {72, 24, 106}, {72, 26, 108},
    {72, 27, 109}, {72, 28, 110}, {72, 29, 111}, {72, 31, 112}, {72, 32, 113}, {72, 33, 115},
    {72, 35, 116}, {72, 36, 117}, {72, 37, 118}, {72, 38, 119}, {72, 40, 120}, {72, 41, 121},
    {71, 42, 122}, {71, 44, 122}, {71, 45, 123}, {71, 46, 124}, {71, 47, 125}, {70, 48, 126},
    {70, 50, 126}, {70, 51, 127}, {70, 52, 128}, {69, 53, 129}, {69, 55, 129}, {69, 56, 130},
    {68, 57, 131}, {68, 58, 131}, {68, 59, 132}, {67, 61, 132}, {67, 62, 133}, {66, 63, 133},
    {66, 64, 134}, {66, 65, 134}, {65, 66, 135}, {65, 68, 135}, {64, 69, 136}, {64, 70, 136},
    {63, 71, 136}, {63, 72, 137}, {62, 73, 137}, {62, 74, 137}, {62, 76, 138}, {61, 77, 138},
    {61, 78, 138}, {60, 79, 138}, {60, 80, 139}, {59, 81, 139}, {59, 82, 139}, {58, 83, 139},
    {58, 84, 140}, {57, 85, 140}, {57, 86, 140}, {56, 88, 140}, {56, 89, 140}, {55, 90, 140},
    {55, 91, 141}, {54, 92, 141}, {54, 93, 141}, {53, 94, 141}, {53, 95, 141}, {52, 96, 141},
    {52, 97, 141}, {51, 98, 141}, {51, 99, 141}, {50, 100, 142}, {50, 101, 142}, {49, 102, 142},
    {49, 103, 142}, {49, 104, 142}, {48, 105, 142}, {48, 106, 142}, {47, 107, 142}, {47, 108, 142},
    {46, 109, 142}, {46, 110, 142}, {46, 111, 142}, {45, 112, 142}, {45, 113, 142}, {44, 113, 142},
    {44, 114, 142}, {44, 115, 142}, {43, 116, 142}, {43, 117, 142}, {42, 118, 142}, {42, 119, 142},
    {42, 120, 142}, {41, 121, 142}, {41, 122, 142}, {41, 123, 142}, {40, 124, 142}, {40, 125, 142},
    {39, 126, 142}, {39, 127, 142}, {39, 128, 142}, {38, 129, 142}, {38, 130, 142}, {38, 130, 142},
    {37, 131, 142}, {37, 132, 142}, {37, 133, 142}, {36, 134, 142}, {36, 135, 142}, {35, 136, 142},
    {35, 137, 142}, {35, 138, 141}, {34, 139, 141}, {34, 140, 141}, {34, 141, 141}, {33, 142, 141},
    {33, 143, 141}, {33, 144, 141}, {33, 145, 140}, {32, 146, 140}, {32, 146, 140}, {32, 147, 140},
    {31, 148, 140}, {31, 149, 139}, {31, 150, 139}, {31, 151, 139}, {31, 152, 139}, {31, 153, 138},
    {31, 154, 138}, {30, 155, 138}, {30, 156, 137}, {30, 157, 137}, {31, 158, 137}, {31, 159, 136},
    {31, 160, 136}, {31, 161, 136}, {31, 161, 135}, {31, 162, 135}, {32, 163, 134}, {32, 164, 134},
    {33, 165, 133}, {33, 166, 133}, {34, 167, 133}, {34, 168, 132}, {35, 169, 131}, {36, 170, 131},
    {37, 171, 130}, {37, 172, 130}, {38, 173, 129}, {39, 173, 129}, {40, 174, 128}, {41, 175, 127},
    {42, 176, 127}, {44, 177, 126}, {45, 178, 125}, {46, 179, 124}, {47, 180, 124}, {49, 181, 123},
    {50, 182, 122}, {52, 182, 121}, {53, 183, 121}, {55, 184, 120}, {56, 185, 119}, {58, 186, 118},
    {59, 187, 117}, {61, 188, 116}, {63, 188, 115}, {64, 189, 114}, {66, 190, 113}, {68, 191, 112},
    {70, 192, 111}, {72, 193, 110}, {74, 193, 109}, {76, 194, 108}, {78, 195, 107}, {80, 196, 106},
    {82, 197, 105}, {84, 197, 104}, {86, 198, 103}, {88, 199, 101}, {90, 200, 100}, {92, 200, 99},
    {94, 201, 98}, {96, 202, 96}, {99, 203, 95}, {101, 203, 94}, {103, 204, 92}, {105, 205, 91},
    {108, 205, 90}, {110, 206, 88}, {112, 207, 87}, {115, 208, 86}, {117, 208, 84}, {119, 209, 83},
    {122, 209, 81}, {124, 210, 80}, {127, 211, 78}, {129, 211, 77}, {132, 212, 75}, {134, 213, 73},
    {137, 213, 72}, {139, 214, 70}, {142, 214, 69}, {144, 215, 67}, {147, 215, 65}, {149, 216, 64},
    {152, 216, 62}, {155, 217, 60}, {157, 217, 59}, {160, 218, 57}, {162, 218, 55}, {165, 219, 54},
    {168, 219, 52}, {170, 220, 50}, {173, 220, 48}, {176, 221, 47}, {178, 221, 45}, {181, 222, 43},
    {184, 222, 41}, {186, 222, 40}, {189, 223, 38}, {192, 223, 37}, {194, 223, 35}, {197, 224, 33},
    {200, 224, 32}, {202, 225, 31}, {205, 225, 29}, {208, 225, 28}, {210, 226, 27}, {213, 226, 26},
    {216, 226, 25}, {218, 227, 25}, {221, 227, 24}, {223, 227, 24}, {226, 228, 24}, {229, 228, 25},
    {231, 228, 25}, {234, 229, 26}, {236, 229, 27}, {239, 229, 28}, {241, 229, 29}, {244, 230, 30},
    {246, 230, 32}, {248, 230, 33}, {251, 231, 35}, {253, 231, 37},
  };
  const auto& c = kTable[std::min<std::size_t>(bin, 255)];
  return {c[0], c[1], c[2]};
}

void export_ply(const MatrixX<float>& coords, std::span<const float> field,
                const std::filesystem::path& path) {
  if (coords.cols() != 3 || static_cast<Index>(field.size()) != coords.rows()) {
    throw std::invalid_argument("export_ply: need [S, 3] coords and S field values");
  }
  float lo = 0.0f, hi = 0.0f;
  if (!field.empty()) {
    const auto [mn, mx] = std::minmax_element(field.begin(), field.end());
    lo = *mn;
    hi = *mx;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_ply: cannot open " + path.string());
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << coords.rows() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float scalar\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  for (Index i = 0; i < coords.rows(); ++i) {
    const float v = field[static_cast<std::size_t>(i)];
    std::size_t bin = 0;
    if (hi > lo) {
      const double t = (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo);
      bin = static_cast<std::size_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
    const auto rgb = Viridis(bin);
    out << FormatFloat(coords(i, 0)) << ' ' << FormatFloat(coords(i, 1)) << ' '
        << FormatFloat(coords(i, 2)) << ' ' << FormatFloat(v) << ' '
        << static_cast<int>(rgb[0]) << ' ' << static_cast<int>(rgb[1]) << ' '
        << static_cast<int>(rgb[2]) << '\n';
  }
  if (!out) throw std::runtime_error("export_ply: write failed for " + path.string());
}

json ExportExplanations(Trainer& trainer, const std::vector<PointCloud>& clouds,
                        const std::vector<PointCloud>& train, Index k,
                        const std::filesystem::path& out_dir,
                        const std::string& class_name) {
  std::filesystem::create_directories(out_dir);
  const auto exemplars = nearest_exemplars(trainer, train, k);
  json entries = json::array();
  for (const auto& cloud : clouds) {
    const ExplanationBundle b = explain(trainer, cloud, exemplars, class_name);
    const std::string stem = SafeName(cloud.shape_id);
    const std::string bundle_name = "bundle_" + stem + ".json";
    const std::string ply_name = "activation_" + stem + ".ply";
    {
      std::ofstream f(out_dir / bundle_name, std::ios::binary);
      f << b.ToJson().dump(2) << '\n';
      if (!f) throw std::runtime_error("explain: cannot write " + bundle_name);
    }
    export_ply(cloud.coords, b.map.values, out_dir / ply_name);
    entries.push_back({{"shape_id", cloud.shape_id},
                       {"explained_class", b.explained_class},
                       {"prototype", b.map.prototype},
                       {"bundle", bundle_name},
                       {"ply", ply_name}});
  }
  json manifest = {{"exemplars_per_prototype", k}, {"explanations", std::move(entries)}};
  std::ofstream f(out_dir / "manifest.json", std::ios::binary);
  f << manifest.dump(2) << '\n';
  if (!f) throw std::runtime_error("explain: cannot write manifest.json");
  return manifest;
}

}  // namespace protoform::explain
