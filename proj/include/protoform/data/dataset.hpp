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

#ifndef PROTOFORM_DATA_DATASET_HPP_
#define PROTOFORM_DATA_DATASET_HPP_

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoform/autodiff/tensor.hpp"
#include "protoform/losses/losses.hpp"

namespace protoform {

// Malformed or inconsistent dataset input.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PointCloud {
  MatrixX<float> coords;  // [S, 3]
  MatrixX<float> scores;  // [S, affordances], each in [0, 1]
  std::string shape_id;
  std::string category;

  Index size() const { return coords.rows(); }
};

// Normalization applied by a converter: stored = (source - centroid) / scale.
struct ShapeTransform {
  std::array<double, 3> centroid{0.0, 0.0, 0.0};
  double scale = 1.0;
};

struct DatasetManifest {
  std::uint32_t format_version = 1;
  std::vector<std::string> affordances;
  std::string split = "train";
  Index points_per_shape = 2048;
  std::vector<std::string> shape_ids;
  std::vector<std::string> categories;
  // Byte offset of each shape relative to the start of the shape data.
  std::vector<std::uint64_t> offsets;
  std::vector<std::optional<ShapeTransform>> transforms;

  Index shape_count() const { return static_cast<Index>(shape_ids.size()); }
  std::uint64_t shape_bytes() const {
    return static_cast<std::uint64_t>(points_per_shape) *
           (3 + affordances.size()) * 4;
  }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<PointCloud> clouds;
};

// PCAD layout, all integers and floats little-endian:
//   "PCAD" | u32 version (1) | u32 header length | UTF-8 JSON header |
//   per shape: S*3 f32 coords, then S*|A| f32 scores (row-major).
inline constexpr char kPcadMagic[4] = {'P', 'C', 'A', 'D'};
inline constexpr std::uint32_t kPcadVersion = 1;
inline constexpr std::uint64_t kPcadPreambleBytes = 12;

void write_pcad(const std::vector<PointCloud>& clouds,
                const DatasetManifest& manifest, const std::string& path);

// Random-access reader; shapes are loaded on demand.
class PcadReader {
 public:
  explicit PcadReader(const std::string& path);

  const DatasetManifest& manifest() const { return manifest_; }
  Index size() const { return manifest_.shape_count(); }
  PointCloud read(Index i);

 private:
  std::string path_;
  std::ifstream in_;
  DatasetManifest manifest_;
  std::uint64_t data_start_ = 0;
};

std::pair<DatasetManifest, PcadReader> read_pcad(const std::string& path);
Dataset LoadDataset(const std::string& path);

// Resolves relative dataset paths against $PROTOFORM_DATA_DIR when set.
std::string ResolveDataPath(const std::string& path);

// Per-point targets derived from affordance scores.
enum class TargetMode { kMulticlass, kMultilabel };

struct PointTargets {
  std::vector<int> hard;  // multi-class only; background id = |affordances|
  BinaryMatrix binary;    // one-hot (multi-class) or thresholded (multi-label)
  MatrixX<float> raw;     // scores, plus a background column in multi-class
};

// Multi-class: argmax affordance when its score >= 0.5, otherwise the
// background class. Multi-label: each affordance thresholded at 0.5.
PointTargets make_targets(const PointCloud& cloud, TargetMode mode);

// Class names as seen by a model: affordances, then "No Label" in
// multi-class mode.
std::vector<std::string> ClassNames(const std::vector<std::string>& affordances,
                                    TargetMode mode);

inline constexpr const char* kBackgroundName = "No Label";

}  // namespace protoform

#endif  // PROTOFORM_DATA_DATASET_HPP_
