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

// Task loss (cross-entropy + Dice) and the prototype cluster/separation
// losses, summed without weights.

#ifndef PROTOFORM_LOSSES_LOSSES_HPP_
#define PROTOFORM_LOSSES_LOSSES_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoform/autodiff/ops.hpp"
#include "protoform/prototype/prototype_layer.hpp"

namespace protoform {

inline constexpr double kDiceSmoothing = 1.0;

// Row-major 0/1 matrix [points, classes].
using BinaryMatrix =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Mean over rows of -log(pred[i, target_i]), log argument floored at 1e-12.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& pred,
                             std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != pred.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(pred.rows()) + " rows");
  }
  std::vector<Index> flat(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= pred.cols()) {
      throw std::out_of_range("cross_entropy: target " +
                              std::to_string(targets[i]) + " out of range for " +
                              std::to_string(pred.cols()) + " classes");
    }
    flat[i] = static_cast<Index>(i) * pred.cols() + targets[i];
  }
  return -mean(log(take(pred, flat)));
}

// Mean binary cross-entropy over all entries, for independent sigmoid heads.
template <typename Scalar>
Tensor<Scalar> binary_cross_entropy(const Tensor<Scalar>& pred,
                                    const BinaryMatrix& gt) {
  if (gt.rows() != pred.rows() || gt.cols() != pred.cols()) {
    detail::ThrowShape("binary_cross_entropy", pred.rows(), pred.cols(),
                       gt.rows(), gt.cols());
  }
  Tensor<Scalar> g(gt.template cast<Scalar>().eval());
  Tensor<Scalar> one_minus_g(
      (MatrixX<Scalar>::Ones(gt.rows(), gt.cols()) - g.value()).eval());
  Tensor<Scalar> one_minus_p = add_scalar(-pred, Scalar(1));
  return -mean(add(mul(g, log(pred)), mul(one_minus_g, log(one_minus_p))));
}

// Soft Dice averaged over classes:
//   1 - (2 sum p g + eps) / (sum p^2 + sum g^2 + eps), eps = 1.
template <typename Scalar>
Tensor<Scalar> dice_loss(const Tensor<Scalar>& pred, const BinaryMatrix& gt) {
  if (gt.rows() != pred.rows() || gt.cols() != pred.cols()) {
    detail::ThrowShape("dice_loss", pred.rows(), pred.cols(), gt.rows(),
                       gt.cols());
  }
  const Scalar eps = static_cast<Scalar>(kDiceSmoothing);
  MatrixX<Scalar> g = gt.template cast<Scalar>();
  MatrixX<Scalar> g_sq = g.colwise().squaredNorm();
  Tensor<Scalar> inter = sum(mul(pred, Tensor<Scalar>(std::move(g))), 0);
  Tensor<Scalar> p_sq = sum(mul(pred, pred), 0);
  Tensor<Scalar> num = add_scalar(scale(inter, Scalar(2)), eps);
  Tensor<Scalar> den = add_scalar(add(p_sq, Tensor<Scalar>(std::move(g_sq))), eps);
  return add_scalar(-mean(div(num, den)), Scalar(1));
}

namespace detail {

// Shared driver for the cluster and separation losses: per cloud, per class
// present in the cloud, the max activation over (points of that class) x
// (prototypes chosen by `pick`), averaged over present classes and clouds.
template <typename Scalar, typename Pick>
Tensor<Scalar> DoubleMaxLoss(const Tensor<Scalar>& acts,
                             std::span<const Index> offsets,
                             const BinaryMatrix& membership, Pick pick) {
  if (membership.rows() != acts.rows()) {
    ThrowShape("prototype_loss", acts.rows(), acts.cols(), membership.rows(),
               membership.cols());
  }
  const Index n_clouds = static_cast<Index>(offsets.size()) - 1;
  if (n_clouds < 1) throw ShapeError("prototype_loss: empty batch");
  const Index p_total = acts.cols();
  std::vector<Tensor<Scalar>> maxima;
  std::vector<Scalar> weights;
  std::vector<Index> flat;
  for (Index b = 0; b < n_clouds; ++b) {
    const Index begin = offsets[b], end = offsets[b + 1];
    std::vector<int> present;
    for (Index a = 0; a < membership.cols(); ++a) {
      for (Index i = begin; i < end; ++i) {
        if (membership(i, a)) {
          present.push_back(static_cast<int>(a));
          break;
        }
      }
    }
    if (present.empty()) continue;
    const Scalar w = Scalar(1) / (static_cast<Scalar>(n_clouds) *
                                  static_cast<Scalar>(present.size()));
    for (int a : present) {
      const std::vector<Index> protos = pick(a);
      if (protos.empty()) continue;
      flat.clear();
      for (Index i = begin; i < end; ++i) {
        if (!membership(i, a)) continue;
        for (Index p : protos) flat.push_back(i * p_total + p);
      }
      maxima.push_back(max(take(acts, flat)));
      weights.push_back(w);
    }
  }
  if (maxima.empty()) return Tensor<Scalar>::Scalar0(Scalar(0));
  MatrixX<Scalar> wrow(1, static_cast<Index>(weights.size()));
  for (std::size_t k = 0; k < weights.size(); ++k) {
    wrow(0, static_cast<Index>(k)) = weights[k];
  }
  return sum(mul(concat(maxima, 1), Tensor<Scalar>(std::move(wrow))));
}

}  // namespace detail

// -(1/N) sum_clouds (1/|A_present|) sum_a max_{p of a} max_{i in a} phi(i, p).
template <typename Scalar>
Tensor<Scalar> cluster_loss(const Tensor<Scalar>& acts,
                            std::span<const Index> offsets,
                            const BinaryMatrix& membership,
                            const std::vector<int>& prototype_classes) {
  return -detail::DoubleMaxLoss(acts, offsets, membership, [&](int a) {
    std::vector<Index> out;
    for (std::size_t p = 0; p < prototype_classes.size(); ++p) {
      if (prototype_classes[p] == a || prototype_classes[p] == kSharedPrototype) {
        out.push_back(static_cast<Index>(p));
      }
    }
    return out;
  });
}

// +(1/N) sum_clouds (1/|A_present|) sum_a max_{p not of a} max_{i in a} phi.
// Zero when every prototype is shared.
template <typename Scalar>
Tensor<Scalar> separation_loss(const Tensor<Scalar>& acts,
                               std::span<const Index> offsets,
                               const BinaryMatrix& membership,
                               const std::vector<int>& prototype_classes) {
  return detail::DoubleMaxLoss(acts, offsets, membership, [&](int a) {
    std::vector<Index> out;
    for (std::size_t p = 0; p < prototype_classes.size(); ++p) {
      if (prototype_classes[p] != a && prototype_classes[p] != kSharedPrototype) {
        out.push_back(static_cast<Index>(p));
      }
    }
    return out;
  });
}

struct LossValues {
  double ce = 0.0;
  double dice = 0.0;
  double cluster = 0.0;
  double separation = 0.0;
  double total = 0.0;
};

template <typename Scalar>
struct LossBreakdown {
  Tensor<Scalar> ce;
  Tensor<Scalar> dice;
  Tensor<Scalar> cluster;
  Tensor<Scalar> separation;
  Tensor<Scalar> total;

  LossValues values() const {
    return {static_cast<double>(ce.item()), static_cast<double>(dice.item()),
            static_cast<double>(cluster.item()),
            static_cast<double>(separation.item()),
            static_cast<double>(total.item())};
  }
};

// Inputs of the combined loss for one batch.
struct LossTargets {
  std::vector<Index> offsets;  // cloud row ranges, size N + 1
  std::vector<int> hard;       // multi-class target ids; empty in multi-label
  BinaryMatrix binary;         // [points, classes] ground-truth membership
};

// ce + dice + cluster + separation. Without `acts` (baseline models) the
// prototype terms are exactly zero. With `hard` empty the task term is
// binary cross-entropy.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const Tensor<Scalar>& pred,
                                 const LossTargets& targets,
                                 const Tensor<Scalar>* acts,
                                 const std::vector<int>& prototype_classes) {
  LossBreakdown<Scalar> out;
  out.ce = targets.hard.empty() ? binary_cross_entropy(pred, targets.binary)
                                : cross_entropy<Scalar>(pred, targets.hard);
  out.dice = dice_loss(pred, targets.binary);
  if (acts != nullptr) {
    out.cluster = cluster_loss(*acts, std::span<const Index>(targets.offsets),
                               targets.binary, prototype_classes);
    out.separation =
        separation_loss(*acts, std::span<const Index>(targets.offsets),
                        targets.binary, prototype_classes);
  } else {
    out.cluster = Tensor<Scalar>::Scalar0(Scalar(0));
    out.separation = Tensor<Scalar>::Scalar0(Scalar(0));
  }
  out.total = add(add(add(out.ce, out.dice), out.cluster), out.separation);
  return out;
}

}  // namespace protoform

#endif  // PROTOFORM_LOSSES_LOSSES_HPP_
