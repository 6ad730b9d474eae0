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

#include "protoform/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace protoform {
namespace {

constexpr double kPi = std::numbers::pi;

double Norm(const std::array<double, 3>& a) {
  return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Part Rect(std::string name, std::array<double, 3> c, std::array<double, 3> u,
          std::array<double, 3> v, std::vector<std::string> labels) {
  Part p;
  p.kind = PartKind::kRect;
  p.name = std::move(name);
  p.center = c;
  p.u = u;
  p.v = v;
  p.labels = std::move(labels);
  return p;
}

Part Cylinder(std::string name, std::array<double, 3> base, double radius,
              double height, std::vector<std::string> labels) {
  Part p;
  p.kind = PartKind::kCylinder;
  p.name = std::move(name);
  p.center = base;
  p.u = {radius, 0, 0};
  p.v = {height, 0, 0};
  p.labels = std::move(labels);
  return p;
}

Part Disk(std::string name, std::array<double, 3> c, double radius,
          std::vector<std::string> labels) {
  Part p;
  p.kind = PartKind::kDisk;
  p.name = std::move(name);
  p.center = c;
  p.u = {radius, 0, 0};
  p.labels = std::move(labels);
  return p;
}

Part TorusArc(std::string name, std::array<double, 3> c, double major,
              double tube, double from, double to,
              std::vector<std::string> labels) {
  Part p;
  p.kind = PartKind::kTorusArc;
  p.name = std::move(name);
  p.center = c;
  p.u = {major, tube, 0};
  p.v = {from, to, 0};
  p.labels = std::move(labels);
  return p;
}

std::vector<Part> Legs(double half_x, double half_y, double inset, double radius,
                       double height) {
  std::vector<Part> legs;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      legs.push_back(Cylinder("leg", {sx * (half_x - inset), sy * (half_y - inset), 0},
                              radius, height, {}));
    }
  }
  return legs;
}

bool Contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

double Part::area() const {
  switch (kind) {
    case PartKind::kRect:
      return 4.0 * Norm(u) * Norm(v);
    case PartKind::kCylinder:
      return 2.0 * kPi * u[0] * v[0];
    case PartKind::kDisk:
      return kPi * u[0] * u[0];
    case PartKind::kTorusArc:
      return 2.0 * kPi * u[1] * u[0] * (v[1] - v[0]);
  }
  return 0.0;
}

std::array<double, 3> Part::Sample(std::mt19937_64& rng) const {
  switch (kind) {
    case PartKind::kRect: {
      const double a = Uniform(rng, -1.0, 1.0);
      const double b = Uniform(rng, -1.0, 1.0);
      return {center[0] + a * u[0] + b * v[0], center[1] + a * u[1] + b * v[1],
              center[2] + a * u[2] + b * v[2]};
    }
    case PartKind::kCylinder: {
      const double t = Uniform(rng, 0.0, 2.0 * kPi);
      const double z = Uniform(rng, 0.0, v[0]);
      return {center[0] + u[0] * std::cos(t), center[1] + u[0] * std::sin(t),
              center[2] + z};
    }
    case PartKind::kDisk: {
      const double r = u[0] * std::sqrt(Uniform(rng, 0.0, 1.0));
      const double t = Uniform(rng, 0.0, 2.0 * kPi);
      return {center[0] + r * std::cos(t), center[1] + r * std::sin(t), center[2]};
    }
    case PartKind::kTorusArc: {
      const double major = u[0], tube = u[1];
      // Area element is proportional to (major + tube cos phi).
      for (;;) {
        const double theta = Uniform(rng, v[0], v[1]);
        const double phi = Uniform(rng, 0.0, 2.0 * kPi);
        const double accept = Uniform(rng, 0.0, major + tube);
        if (accept > major + tube * std::cos(phi)) continue;
        const double radial = major + tube * std::cos(phi);
        return {center[0] + radial * std::cos(theta), center[1] + tube * std::sin(phi),
                center[2] + radial * std::sin(theta)};
      }
    }
  }
  return center;
}

std::vector<std::string> SyntheticCategories(const std::vector<std::string>& classes) {
  if (classes.empty()) throw DataError("synthetic: empty class set");
  for (const auto& c : classes) {
    if (!Contains(SyntheticClassUniverse(), c)) {
      throw DataError("synthetic: unknown class '" + c + "'");
    }
    if (std::count(classes.begin(), classes.end(), c) > 1) {
      throw DataError("synthetic: duplicate class '" + c + "'");
    }
  }
  std::vector<std::string> cats;
  if (Contains(classes, "sittable")) cats.push_back("chair");
  if (Contains(classes, "contain") || Contains(classes, "grasp")) cats.push_back("mug");
  if (Contains(classes, "support")) cats.push_back("table");
  if (Contains(classes, "openable")) cats.push_back("box");
  return cats;
}

SyntheticObject ComposeObject(const std::string& category, bool overlap,
                              std::mt19937_64& rng) {
  SyntheticObject obj;
  obj.category = category;
  auto& parts = obj.parts;
  if (category == "chair") {
    const double w = Uniform(rng, 0.20, 0.28), d = Uniform(rng, 0.20, 0.28);
    const double h = Uniform(rng, 0.40, 0.50), back = Uniform(rng, 0.18, 0.26);
    std::vector<std::string> seat = {"sittable"};
    if (overlap) seat.push_back("support");
    parts.push_back(Rect("seat", {0, 0, h}, {w, 0, 0}, {0, d, 0}, seat));
    for (auto& leg : Legs(w, d, 0.03, 0.025, h)) parts.push_back(std::move(leg));
    parts.push_back(Rect("backrest", {0, -d, h + back}, {w, 0, 0}, {0, 0, back}, {}));
  } else if (category == "table") {
    const double a = Uniform(rng, 0.45, 0.65), b = Uniform(rng, 0.30, 0.45);
    const double h = Uniform(rng, 0.60, 0.75);
    parts.push_back(Rect("top", {0, 0, h}, {a, 0, 0}, {0, b, 0}, {"support"}));
    for (auto& leg : Legs(a, b, 0.04, 0.03, h)) parts.push_back(std::move(leg));
  } else if (category == "mug") {
    const double r = Uniform(rng, 0.25, 0.35), h = Uniform(rng, 0.60, 0.85);
    const double major = Uniform(rng, 0.16, 0.22), tube = Uniform(rng, 0.03, 0.045);
    parts.push_back(Cylinder("body", {0, 0, 0}, r, h, {"contain"}));
    parts.push_back(Disk("bottom", {0, 0, 0}, r, {"contain"}));
    parts.push_back(TorusArc("handle", {r, 0, 0.5 * h}, major, tube, -0.5 * kPi,
                             0.5 * kPi, {"grasp"}));
  } else if (category == "box") {
    const double a = Uniform(rng, 0.25, 0.40), b = Uniform(rng, 0.25, 0.40);
    const double c = Uniform(rng, 0.15, 0.25);
    parts.push_back(Rect("bottom", {0, 0, 0}, {a, 0, 0}, {0, b, 0}, {"contain"}));
    parts.push_back(Rect("wall", {a, 0, c}, {0, b, 0}, {0, 0, c}, {"contain"}));
    parts.push_back(Rect("wall", {-a, 0, c}, {0, b, 0}, {0, 0, c}, {"contain"}));
    parts.push_back(Rect("wall", {0, b, c}, {a, 0, 0}, {0, 0, c}, {"contain"}));
    parts.push_back(Rect("wall", {0, -b, c}, {a, 0, 0}, {0, 0, c}, {"contain"}));
    parts.push_back(Rect("lid", {0, 0, 2 * c}, {a, 0, 0}, {0, b, 0}, {"openable"}));
  } else {
    throw DataError("synthetic: unknown category '" + category + "'");
  }
  return obj;
}

PointCloud SampleObject(const SyntheticObject& object, Index points,
                        const std::vector<std::string>& classes,
                        double smoothing_sigma, std::mt19937_64& rng) {
  std::vector<double> areas;
  for (const auto& p : object.parts) areas.push_back(p.area());
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  const Index a = static_cast<Index>(classes.size());
  PointCloud cloud;
  cloud.category = object.category;
  cloud.coords.resize(points, 3);
  cloud.scores = MatrixX<float>::Zero(points, a);
  std::vector<std::array<double, 3>> xyz(static_cast<std::size_t>(points));
  std::array<double, 3> centroid{0, 0, 0};
  for (Index i = 0; i < points; ++i) {
    const Part& part = object.parts[pick(rng)];
    xyz[i] = part.Sample(rng);
    for (int k = 0; k < 3; ++k) centroid[k] += xyz[i][k];
    for (Index c = 0; c < a; ++c) {
      if (Contains(part.labels, classes[c])) cloud.scores(i, c) = 1.0f;
    }
  }
  for (auto& c : centroid) c /= static_cast<double>(points);
  double scale = 0.0;
  for (auto& p : xyz) {
    for (int k = 0; k < 3; ++k) p[k] -= centroid[k];
    scale = std::max(scale, Norm(p));
  }
  if (scale <= 0.0) scale = 1.0;
  for (Index i = 0; i < points; ++i) {
    for (int k = 0; k < 3; ++k) cloud.coords(i, k) = static_cast<float>(xyz[i][k] / scale);
  }
  if (smoothing_sigma > 0.0) {
    const MatrixX<float> hard = cloud.scores;
    const double inv = 1.0 / (2.0 * smoothing_sigma * smoothing_sigma);
    for (Index c = 0; c < a; ++c) {
      for (Index i = 0; i < points; ++i) {
        if (hard(i, c) > 0.0f) continue;
        double best = 0.0;
        for (Index j = 0; j < points; ++j) {
          if (hard(j, c) <= 0.0f) continue;
          double d2 = 0.0;
          for (int k = 0; k < 3; ++k) {
            const double t = static_cast<double>(cloud.coords(i, k)) - cloud.coords(j, k);
            d2 += t * t;
          }
          best = std::max(best, std::exp(-d2 * inv));
        }
        cloud.scores(i, c) = static_cast<float>(best);
      }
    }
  }
  return cloud;
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  if (config.points_per_shape < 64) {
    throw DataError("synthetic: points_per_shape must be >= 64, got " +
                    std::to_string(config.points_per_shape));
  }
  if (config.shapes < 0) throw DataError("synthetic: negative shape count");
  const auto categories = SyntheticCategories(config.classes);
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(config.stream),
                    static_cast<std::uint32_t>(config.stream >> 32)};
  std::mt19937_64 rng(seq);
  Dataset d;
  d.manifest.affordances = config.classes;
  d.manifest.split = config.split;
  d.manifest.points_per_shape = config.points_per_shape;
  for (Index i = 0; i < config.shapes; ++i) {
    const auto& category = categories[static_cast<std::size_t>(i) % categories.size()];
    const SyntheticObject obj = ComposeObject(category, config.overlap, rng);
    PointCloud cloud = SampleObject(obj, config.points_per_shape, config.classes,
                                    config.smoothing_sigma, rng);
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%s_%05lld", config.split.c_str(),
                  category.c_str(), static_cast<long long>(i));
    cloud.shape_id = id;
    d.manifest.shape_ids.push_back(cloud.shape_id);
    d.manifest.categories.push_back(category);
    d.manifest.offsets.push_back(static_cast<std::uint64_t>(i) *
                                 d.manifest.shape_bytes());
    d.clouds.push_back(std::move(cloud));
  }
  d.manifest.transforms.assign(d.clouds.size(), std::nullopt);
  return d;
}

}  // namespace protoform
