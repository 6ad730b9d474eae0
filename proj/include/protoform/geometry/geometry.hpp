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

// Brute-force geometric kernels for point sets of a few thousand points.
// Distances are accumulated in double regardless of the input scalar.

#ifndef PROTOFORM_GEOMETRY_GEOMETRY_HPP_
#define PROTOFORM_GEOMETRY_GEOMETRY_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoform/autodiff/ops.hpp"

namespace protoform {

using IndexSet = std::vector<Index>;

// Row-major [rows, cols] table of point indices.
struct IndexTable {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> data;

  Index operator()(Index r, Index c) const {
    return data[static_cast<std::size_t>(r * cols + c)];
  }
};

template <typename DerivedA, typename DerivedB>
double SquaredDistance(const Eigen::MatrixBase<DerivedA>& a, Index i,
                       const Eigen::MatrixBase<DerivedB>& b, Index j) {
  double acc = 0.0;
  for (Index d = 0; d < a.cols(); ++d) {
    const double diff =
        static_cast<double>(a(i, d)) - static_cast<double>(b(j, d));
    acc += diff * diff;
  }
  return acc;
}

// Greedy max-min selection of k rows of `points` starting from `start`.
// Ties go to the lowest index.
template <typename Derived>
IndexSet farthest_point_sample(const Eigen::MatrixBase<Derived>& points,
                               Index k, Index start) {
  const Index n = points.rows();
  if (k < 1 || k > n) {
    throw std::invalid_argument("farthest_point_sample: k=" +
                                std::to_string(k) + " must be in [1, " +
                                std::to_string(n) + "]");
  }
  if (start < 0 || start >= n) {
    throw std::invalid_argument("farthest_point_sample: start " +
                                std::to_string(start) + " out of range");
  }
  IndexSet selected;
  selected.reserve(static_cast<std::size_t>(k));
  std::vector<double> min_dist(static_cast<std::size_t>(n),
                               std::numeric_limits<double>::infinity());
  Index current = start;
  for (Index step = 0; step < k; ++step) {
    selected.push_back(current);
    Index best = 0;
    double best_dist = -1.0;
    for (Index i = 0; i < n; ++i) {
      const double d = SquaredDistance(points, i, points, current);
      auto& m = min_dist[static_cast<std::size_t>(i)];
      if (d < m) m = d;
      if (m > best_dist) {
        best_dist = m;
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

// Per center, indices within `radius` in ascending order, capped at
// `max_samples`. Short rows repeat their first hit; rows with no hit are
// filled with the nearest point.
template <typename DerivedC, typename DerivedP>
IndexTable ball_query(const Eigen::MatrixBase<DerivedC>& centers,
                      const Eigen::MatrixBase<DerivedP>& points, double radius,
                      Index max_samples) {
  if (points.rows() == 0) {
    throw std::invalid_argument("ball_query: empty point set");
  }
  if (radius <= 0.0 || max_samples < 1) {
    throw std::invalid_argument("ball_query: radius must be > 0 and "
                                "max_samples >= 1");
  }
  const double r2 = radius * radius;
  IndexTable table{centers.rows(), max_samples, {}};
  table.data.reserve(static_cast<std::size_t>(centers.rows() * max_samples));
  std::vector<Index> hits;
  for (Index c = 0; c < centers.rows(); ++c) {
    hits.clear();
    Index nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < points.rows(); ++i) {
      const double d = SquaredDistance(centers, c, points, i);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = i;
      }
      if (d <= r2 && static_cast<Index>(hits.size()) < max_samples) {
        hits.push_back(i);
      }
    }
    const Index fill = hits.empty() ? nearest : hits.front();
    for (Index s = 0; s < max_samples; ++s) {
      table.data.push_back(s < static_cast<Index>(hits.size())
                               ? hits[static_cast<std::size_t>(s)]
                               : fill);
    }
  }
  return table;
}

// k nearest rows of `refs` for every row of `queries` (any dimension),
// ascending by distance then index.
template <typename DerivedQ, typename DerivedR>
IndexTable knn(const Eigen::MatrixBase<DerivedQ>& queries,
               const Eigen::MatrixBase<DerivedR>& refs, Index k) {
  const Index n = refs.rows();
  if (k < 1 || k > n) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) +
                                " exceeds reference count " +
                                std::to_string(n));
  }
  if (queries.cols() != refs.cols()) {
    throw ShapeError("knn: dimension mismatch " +
                     std::to_string(queries.cols()) + " vs " +
                     std::to_string(refs.cols()));
  }
  IndexTable table{queries.rows(), k, {}};
  table.data.reserve(static_cast<std::size_t>(queries.rows() * k));
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
  for (Index q = 0; q < queries.rows(); ++q) {
    for (Index i = 0; i < n; ++i) {
      dist[static_cast<std::size_t>(i)] = {SquaredDistance(queries, q, refs, i),
                                           i};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (Index s = 0; s < k; ++s) {
      table.data.push_back(dist[static_cast<std::size_t>(s)].second);
    }
  }
  return table;
}

// Three-nearest-neighbor inverse-square-distance weights.
struct InterpolationWeights {
  IndexTable neighbors;          // [T, 3]
  std::vector<double> weights;   // row-major [T, 3], rows sum to 1
};

template <typename DerivedT, typename DerivedS>
InterpolationWeights interpolation_weights(
    const Eigen::MatrixBase<DerivedT>& target,
    const Eigen::MatrixBase<DerivedS>& source) {
  if (source.rows() < 3) {
    throw std::invalid_argument("interpolate_features: need at least 3 source "
                                "points, got " +
                                std::to_string(source.rows()));
  }
  InterpolationWeights out{knn(target, source, 3), {}};
  out.weights.resize(static_cast<std::size_t>(target.rows() * 3));
  for (Index t = 0; t < target.rows(); ++t) {
    double total = 0.0;
    double w[3];
    for (Index j = 0; j < 3; ++j) {
      const double d2 = SquaredDistance(target, t, source, out.neighbors(t, j));
      w[j] = 1.0 / std::max(d2, 1e-10);
      total += w[j];
    }
    for (Index j = 0; j < 3; ++j) {
      out.weights[static_cast<std::size_t>(t * 3 + j)] = w[j] / total;
    }
  }
  return out;
}

// Weighted sum of source feature rows, differentiable w.r.t. the features.
// `row_offset` shifts neighbor indices into a stacked feature tensor.
template <typename Scalar>
Tensor<Scalar> interpolate_features(const Tensor<Scalar>& source_feats,
                                    const InterpolationWeights& w,
                                    Index row_offset = 0) {
  const Index t = w.neighbors.rows;
  std::vector<Index> rows(w.neighbors.data.size());
  std::vector<Index> owner(rows.size());
  MatrixX<Scalar> weight(static_cast<Index>(rows.size()), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k] = w.neighbors.data[k] + row_offset;
    owner[k] = static_cast<Index>(k / 3);
    weight(static_cast<Index>(k), 0) = static_cast<Scalar>(w.weights[k]);
  }
  Tensor<Scalar> picked = gather_rows(source_feats, rows);
  Tensor<Scalar> weighted = mul(picked, Tensor<Scalar>(std::move(weight)));
  return scatter_add_rows(weighted, owner, t);
}

struct AugmentOptions {
  double jitter = 0.05;
  bool rotate = true;
  bool shuffle = true;
};

// Shuffle, then rotate about the z (up) axis by a uniform angle, then add
// uniform per-coordinate jitter in [-jitter, jitter]. `scores` rows follow
// the same permutation as `coords` rows.
template <typename Scalar, typename Rng>
void augment(MatrixX<Scalar>& coords, MatrixX<Scalar>& scores,
             const AugmentOptions& opt, Rng& rng) {
  const Index n = coords.rows();
  if (opt.shuffle) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixX<Scalar> c(n, coords.cols()), s(n, scores.cols());
    for (Index i = 0; i < n; ++i) {
      c.row(i) = coords.row(perm[static_cast<std::size_t>(i)]);
      if (scores.cols() > 0) s.row(i) = scores.row(perm[static_cast<std::size_t>(i)]);
    }
    coords = std::move(c);
    scores = std::move(s);
  }
  if (opt.rotate) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    const double theta = angle(rng);
    const double cs = std::cos(theta), sn = std::sin(theta);
    for (Index i = 0; i < n; ++i) {
      const double x = coords(i, 0), y = coords(i, 1);
      coords(i, 0) = static_cast<Scalar>(cs * x - sn * y);
      coords(i, 1) = static_cast<Scalar>(sn * x + cs * y);
    }
  }
  if (opt.jitter > 0.0) {
    std::uniform_real_distribution<double> noise(-opt.jitter, opt.jitter);
    for (Index i = 0; i < n; ++i) {
      for (Index d = 0; d < coords.cols(); ++d) {
        coords(i, d) = static_cast<Scalar>(coords(i, d) + noise(rng));
      }
    }
  }
}

}  // namespace protoform

#endif  // PROTOFORM_GEOMETRY_GEOMETRY_HPP_
