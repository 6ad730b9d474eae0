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

// Procedural objects whose affordance labels follow from part identity:
// chairs, tables, mugs and lidded boxes, sampled uniformly by surface area.

#ifndef PROTOFORM_DATA_SYNTHETIC_HPP_
#define PROTOFORM_DATA_SYNTHETIC_HPP_

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "protoform/data/dataset.hpp"

namespace protoform {

inline const std::vector<std::string>& SyntheticClassUniverse() {
  static const std::vector<std::string> kClasses = {
      "sittable", "contain", "grasp", "support", "openable"};
  return kClasses;
}

struct SyntheticConfig {
  std::uint64_t seed = 7;
  Index shapes = 200;
  Index points_per_shape = 256;
  // Affordance columns, in output order.
  std::vector<std::string> classes = {"sittable", "contain", "grasp", "support"};
  // Chair seats also afford support (multi-label data).
  bool overlap = false;
  // Soft boundary: unlabeled points within reach of a labeled part get
  // exp(-d^2 / 2 sigma^2). 0 keeps labels hard.
  double smoothing_sigma = 0.0;
  std::string split = "train";
  // Decorrelates splits drawn from the same seed.
  std::uint64_t stream = 0;
};

enum class PartKind { kRect, kCylinder, kDisk, kTorusArc };

// One surface primitive in object coordinates (z up).
struct Part {
  PartKind kind = PartKind::kRect;
  std::string name;
  std::array<double, 3> center{0, 0, 0};
  // kRect: half-extent vectors u, v (orthogonal). kCylinder: radius in u[0],
  // height in v[0], axis +z from center. kDisk: radius in u[0], horizontal.
  // kTorusArc: major radius u[0], tube radius u[1], arc in the xz plane
  // spanning angles [v[0], v[1]] around center.
  std::array<double, 3> u{0, 0, 0};
  std::array<double, 3> v{0, 0, 0};
  std::vector<std::string> labels;

  double area() const;
  std::array<double, 3> Sample(std::mt19937_64& rng) const;
};

struct SyntheticObject {
  std::string category;
  std::vector<Part> parts;
};

// Categories whose labeled parts are all expressible with `classes`.
std::vector<std::string> SyntheticCategories(const std::vector<std::string>& classes);

SyntheticObject ComposeObject(const std::string& category, bool overlap,
                              std::mt19937_64& rng);

// Samples `points` on the object, normalizes to zero centroid and unit
// max-norm, and writes score columns for `classes`.
PointCloud SampleObject(const SyntheticObject& object, Index points,
                        const std::vector<std::string>& classes,
                        double smoothing_sigma, std::mt19937_64& rng);

// Pure function of the config.
Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace protoform

#endif  // PROTOFORM_DATA_SYNTHETIC_HPP_
