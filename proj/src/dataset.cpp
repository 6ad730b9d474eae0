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

#include "protoform/data/dataset.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <filesystem>

#include <nlohmann/json.hpp>

namespace protoform {
namespace {

using nlohmann::json;
using binio::GetFloats;
using binio::GetU32;
using binio::PutFloats;
using binio::PutU32;

json ManifestToJson(const DatasetManifest& m) {
  json transforms = json::array();
  bool any = false;
  for (const auto& t : m.transforms) {
    if (t) {
      any = true;
      transforms.push_back({{"centroid", t->centroid}, {"scale", t->scale}});
    } else {
      transforms.push_back(nullptr);
    }
  }
  json j = {{"format_version", m.format_version},
            {"affordances", m.affordances},
            {"split", m.split},
            {"points_per_shape", m.points_per_shape},
            {"shape_count", m.shape_count()},
            {"shape_ids", m.shape_ids},
            {"categories", m.categories},
            {"offsets", m.offsets}};
  if (any) j["transforms"] = transforms;
  return j;
}

DatasetManifest ManifestFromJson(const json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.affordances = j.at("affordances").get<std::vector<std::string>>();
  m.split = j.at("split").get<std::string>();
  m.points_per_shape = j.at("points_per_shape").get<Index>();
  m.shape_ids = j.at("shape_ids").get<std::vector<std::string>>();
  m.categories = j.at("categories").get<std::vector<std::string>>();
  m.offsets = j.at("offsets").get<std::vector<std::uint64_t>>();
  const auto count = j.at("shape_count").get<Index>();
  if (count != m.shape_count() ||
      static_cast<Index>(m.categories.size()) != count ||
      static_cast<Index>(m.offsets.size()) != count) {
    throw DataError("pcad: header shape_count " + std::to_string(count) +
                    " disagrees with its id/category/offset lists");
  }
  m.transforms.resize(static_cast<std::size_t>(count));
  if (j.contains("transforms")) {
    const auto& t = j.at("transforms");
    if (static_cast<Index>(t.size()) != count) {
      throw DataError("pcad: header transforms list has wrong length");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i].is_null()) continue;
      ShapeTransform st;
      st.centroid = t[i].at("centroid").get<std::array<double, 3>>();
      st.scale = t[i].at("scale").get<double>();
      m.transforms[i] = st;
    }
  }
  return m;
}

}  // namespace

void write_pcad(const std::vector<PointCloud>& clouds,
                const DatasetManifest& base, const std::string& path) {
  DatasetManifest m = base;
  m.format_version = kPcadVersion;
  m.shape_ids.clear();
  m.categories.clear();
  m.offsets.clear();
  if (m.transforms.size() != clouds.size()) m.transforms.assign(clouds.size(), std::nullopt);
  const Index width = static_cast<Index>(m.affordances.size());
  if (!clouds.empty() && base.points_per_shape <= 0) {
    throw DataError("pcad: points_per_shape must be positive");
  }
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const auto& c = clouds[i];
    if (c.scores.cols() != width) {
      throw DataError("pcad: shape " + std::to_string(i) + " has score width " +
                      std::to_string(c.scores.cols()) + ", manifest lists " +
                      std::to_string(width) + " affordances");
    }
    if (c.coords.rows() != m.points_per_shape || c.coords.cols() != 3 ||
        c.scores.rows() != m.points_per_shape) {
      throw DataError("pcad: shape " + std::to_string(i) + " has " +
                      std::to_string(c.coords.rows()) + " points, expected " +
                      std::to_string(m.points_per_shape));
    }
    m.shape_ids.push_back(c.shape_id);
    m.categories.push_back(c.category);
    m.offsets.push_back(static_cast<std::uint64_t>(i) * m.shape_bytes());
  }

  const std::string header = ManifestToJson(m).dump();
  std::string out(kPcadMagic, 4);
  PutU32(out, kPcadVersion);
  PutU32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& c : clouds) {
    PutFloats(out, c.coords.data(), static_cast<std::size_t>(c.coords.size()));
    PutFloats(out, c.scores.data(), static_cast<std::size_t>(c.scores.size()));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("pcad: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("pcad: write to '" + path + "' failed");
}

PcadReader::PcadReader(const std::string& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw DataError("pcad: cannot open '" + path + "'");
  in_.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in_.tellg());
  in_.seekg(0);
  unsigned char pre[kPcadPreambleBytes];
  if (file_size < kPcadPreambleBytes ||
      !in_.read(reinterpret_cast<char*>(pre), kPcadPreambleBytes)) {
    throw DataError("pcad: '" + path + "' truncated at byte " +
                    std::to_string(file_size) + " (preamble needs 12 bytes)");
  }
  if (std::memcmp(pre, kPcadMagic, 4) != 0) {
    throw DataError("pcad: bad magic at byte 0 of '" + path + "'");
  }
  const std::uint32_t version = GetU32(pre + 4);
  if (version != kPcadVersion) {
    throw DataError("pcad: unsupported version " + std::to_string(version) +
                    " at byte 4 of '" + path + "'");
  }
  const std::uint32_t header_len = GetU32(pre + 8);
  if (file_size < kPcadPreambleBytes + header_len) {
    throw DataError("pcad: '" + path + "' truncated at byte " +
                    std::to_string(file_size) + " inside header ending at byte " +
                    std::to_string(kPcadPreambleBytes + header_len));
  }
  std::string header(header_len, '\0');
  in_.read(header.data(), header_len);
  try {
    manifest_ = ManifestFromJson(json::parse(header));
  } catch (const json::exception& e) {
    throw DataError("pcad: malformed header at byte 12 of '" + path +
                    "': " + e.what());
  }
  data_start_ = kPcadPreambleBytes + header_len;
  const std::uint64_t shape_bytes = manifest_.shape_bytes();
  for (std::size_t i = 0; i < manifest_.offsets.size(); ++i) {
    if (manifest_.offsets[i] != i * shape_bytes) {
      throw DataError("pcad: shape " + std::to_string(i) +
                      " offset is not contiguous (header at byte 12)");
    }
  }
  const std::uint64_t expected =
      data_start_ + shape_bytes * static_cast<std::uint64_t>(size());
  if (file_size < expected) {
    const std::uint64_t bad_shape =
        shape_bytes == 0 ? 0 : (file_size - data_start_) / shape_bytes;
    throw DataError("pcad: '" + path + "' truncated at byte " +
                    std::to_string(file_size) + ", expected " +
                    std::to_string(expected) + " bytes (shape " +
                    std::to_string(bad_shape) + " incomplete)");
  }
}

PointCloud PcadReader::read(Index i) {
  if (i < 0 || i >= size()) {
    throw std::out_of_range("pcad: shape index " + std::to_string(i) +
                            " out of range for " + std::to_string(size()) +
                            " shapes");
  }
  const Index s = manifest_.points_per_shape;
  const Index a = static_cast<Index>(manifest_.affordances.size());
  std::string buf(manifest_.shape_bytes(), '\0');
  const std::uint64_t at = data_start_ + manifest_.offsets[static_cast<std::size_t>(i)];
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(at));
  if (!in_.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw DataError("pcad: short read of shape " + std::to_string(i) +
                    " at byte " + std::to_string(at));
  }
  PointCloud c;
  c.coords.resize(s, 3);
  c.scores.resize(s, a);
  GetFloats(buf.data(), c.coords.data(), static_cast<std::size_t>(s * 3));
  GetFloats(buf.data() + 12 * s, c.scores.data(), static_cast<std::size_t>(s * a));
  c.shape_id = manifest_.shape_ids[static_cast<std::size_t>(i)];
  c.category = manifest_.categories[static_cast<std::size_t>(i)];
  return c;
}

std::pair<DatasetManifest, PcadReader> read_pcad(const std::string& path) {
  PcadReader reader(path);
  DatasetManifest m = reader.manifest();
  return {std::move(m), std::move(reader)};
}

Dataset LoadDataset(const std::string& path) {
  PcadReader reader(ResolveDataPath(path));
  Dataset d;
  d.manifest = reader.manifest();
  for (Index i = 0; i < reader.size(); ++i) d.clouds.push_back(reader.read(i));
  return d;
}

std::string ResolveDataPath(const std::string& path) {
  namespace fs = std::filesystem;
  const char* root = std::getenv("PROTOFORM_DATA_DIR");
  if (root == nullptr || *root == '\0' || fs::path(path).is_absolute() ||
      fs::exists(path)) {
    return path;
  }
  return (fs::path(root) / path).string();
}

std::vector<std::string> ClassNames(const std::vector<std::string>& affordances,
                                    TargetMode mode) {
  std::vector<std::string> names = affordances;
  if (mode == TargetMode::kMulticlass) names.push_back(kBackgroundName);
  return names;
}

PointTargets make_targets(const PointCloud& cloud, TargetMode mode) {
  const Index s = cloud.size();
  const Index a = cloud.scores.cols();
  PointTargets t;
  if (mode == TargetMode::kMultilabel) {
    t.raw = cloud.scores;
    t.binary = (cloud.scores.array() >= 0.5f).cast<std::uint8_t>().matrix();
    return t;
  }
  t.hard.resize(static_cast<std::size_t>(s));
  t.binary = BinaryMatrix::Zero(s, a + 1);
  t.raw.resize(s, a + 1);
  for (Index i = 0; i < s; ++i) {
    int best = static_cast<int>(a);
    float best_score = 0.0f;
    for (Index c = 0; c < a; ++c) {
      const float v = cloud.scores(i, c);
      if (v >= 0.5f && v > best_score) {
        best = static_cast<int>(c);
        best_score = v;
      }
    }
    float max_score = a > 0 ? cloud.scores.row(i).maxCoeff() : 0.0f;
    t.hard[static_cast<std::size_t>(i)] = best;
    t.binary(i, best) = 1;
    t.raw.row(i).head(a) = cloud.scores.row(i);
    t.raw(i, a) = std::clamp(1.0f - max_score, 0.0f, 1.0f);
  }
  return t;
}

}  // namespace protoform
