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

// Probabilistic prototypes on the hypersphere. A prototype is an anchor
// direction plus a truncated Gaussian over cosine similarity in [-1, 1]; its
// activation for an embedding z is the density of cos(z, anchor).

#ifndef PROTOFORM_PROTOTYPE_PROTOTYPE_LAYER_HPP_
#define PROTOFORM_PROTOTYPE_PROTOTYPE_LAYER_HPP_

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoform/backbones/layers.hpp"

namespace protoform {

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kDefaultSigmaMin = 0.05;
inline constexpr int kSharedPrototype = -1;

inline double StandardNormalPdf(double x) {
  return 0.3989422804014327 * std::exp(-0.5 * x * x);
}

inline double StandardNormalCdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// (a . b) / (|a| |b| + 1e-8).
inline double CosineSimilarity(std::span<const double> a,
                               std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: dimension mismatch " +
                     std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + kCosineEps);
}

// Density at s of N(mu, sigma^2) truncated to [-1, 1].
inline double TruncatedNormalPdf(double s, double mu, double sigma) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("truncated_gaussian_pdf: sigma must be > 0");
  }
  const double mass = StandardNormalCdf((1.0 - mu) / sigma) -
                      StandardNormalCdf((-1.0 - mu) / sigma);
  return StandardNormalPdf((s - mu) / sigma) / (sigma * mass);
}

// Pairwise cosine similarity between the rows of z [N, D] and anchors [P, D].
template <typename Scalar>
Tensor<Scalar> cosine_similarity(const Tensor<Scalar>& z,
                                 const Tensor<Scalar>& anchors) {
  if (z.cols() != anchors.cols()) {
    throw ShapeError("cosine_similarity: embedding dim " +
                     std::to_string(z.cols()) + " vs anchor dim " +
                     std::to_string(anchors.cols()));
  }
  Tensor<Scalar> dot = matmul(z, transpose(anchors));
  Tensor<Scalar> zn = sqrt(sum(mul(z, z), 1));
  Tensor<Scalar> an = sqrt(sum(mul(anchors, anchors), 1));
  Tensor<Scalar> denom =
      add_scalar(matmul(zn, transpose(an)), static_cast<Scalar>(kCosineEps));
  return div(dot, denom);
}

// Elementwise truncated-normal density of s [N, P] with per-column mu and
// sigma [1, P]. Differentiable w.r.t. all three inputs.
template <typename Scalar>
Tensor<Scalar> truncated_gaussian_pdf(const Tensor<Scalar>& s,
                                      const Tensor<Scalar>& mu,
                                      const Tensor<Scalar>& sigma) {
  const Index n = s.rows(), p = s.cols();
  if (mu.rows() != 1 || sigma.rows() != 1 || mu.cols() != p ||
      sigma.cols() != p) {
    throw ShapeError("truncated_gaussian_pdf: mu/sigma must be [1," +
                     std::to_string(p) + "]");
  }
  // Per column: 1/sigma, log-mass derivatives.
  std::vector<double> inv_sigma(p), dlogz_dmu(p), dlogz_dsigma(p), norm(p);
  for (Index j = 0; j < p; ++j) {
    const double m = mu.value()(0, j), sd = sigma.value()(0, j);
    if (!(sd > 0.0)) {
      throw std::invalid_argument("truncated_gaussian_pdf: sigma must be > 0");
    }
    const double a = (-1.0 - m) / sd, b = (1.0 - m) / sd;
    const double mass = StandardNormalCdf(b) - StandardNormalCdf(a);
    const double pa = StandardNormalPdf(a), pb = StandardNormalPdf(b);
    inv_sigma[j] = 1.0 / sd;
    norm[j] = 1.0 / (sd * mass);
    dlogz_dmu[j] = (pa - pb) / (sd * mass);
    dlogz_dsigma[j] = (a * pa - b * pb) / (sd * mass);
  }
  MatrixX<Scalar> out(n, p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) {
      const double x = (s.value()(i, j) - mu.value()(0, j)) * inv_sigma[j];
      out(i, j) = static_cast<Scalar>(StandardNormalPdf(x) * norm[j]);
    }
  }
  return MakeOp<Scalar>(
      "truncated_gaussian_pdf", out, {s, mu, sigma},
      [out, inv_sigma, dlogz_dmu, dlogz_dsigma](const MatrixX<Scalar>& g,
                                                auto& in) {
        const Index n = out.rows(), p = out.cols();
        MatrixX<Scalar> ds(n, p), dmu = MatrixX<Scalar>::Zero(1, p),
                                  dsd = MatrixX<Scalar>::Zero(1, p);
        for (Index j = 0; j < p; ++j) {
          double acc_mu = 0.0, acc_sd = 0.0;
          const double m = in[1]->value(0, j);
          for (Index i = 0; i < n; ++i) {
            const double x = (in[0]->value(i, j) - m) * inv_sigma[j];
            const double gf = static_cast<double>(g(i, j)) * out(i, j);
            ds(i, j) = static_cast<Scalar>(-gf * x * inv_sigma[j]);
            acc_mu += gf * (x * inv_sigma[j] - dlogz_dmu[j]);
            acc_sd += gf * ((x * x - 1.0) * inv_sigma[j] - dlogz_dsigma[j]);
          }
          dmu(0, j) = static_cast<Scalar>(acc_mu);
          dsd(0, j) = static_cast<Scalar>(acc_sd);
        }
        if (in[0]->requires_grad) in[0]->Accumulate(ds);
        if (in[1]->requires_grad) in[1]->Accumulate(dmu);
        if (in[2]->requires_grad) in[2]->Accumulate(dsd);
      });
}

struct PrototypeInit {
  double mu = 0.5;
  double sigma = 0.1;
  double sigma_min = kDefaultSigmaMin;
};

// The learnable prototypes. Column p of an activation map belongs to
// prototype p; class_ids[p] is its class or kSharedPrototype.
template <typename Scalar>
class PrototypeBank {
 public:
  PrototypeBank() = default;

  // Multi-class layout: `per_class` prototypes for each class, class-major.
  // With `shared` all prototypes carry kSharedPrototype.
  template <typename Rng>
  PrototypeBank(Index num_classes, Index per_class, Index dim, bool shared,
                Rng& rng, const PrototypeInit& init = {})
      : sigma_min_(init.sigma_min) {
    if (num_classes < 1 || per_class < 1 || dim < 1) {
      throw std::invalid_argument("prototype bank: classes, prototypes per "
                                  "class and dim must be >= 1");
    }
    if (init.sigma <= init.sigma_min) {
      throw std::invalid_argument("prototype bank: initial sigma must exceed "
                                  "sigma_min");
    }
    const Index total = num_classes * per_class;
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixX<Scalar> a(total, dim);
    for (Index p = 0; p < total; ++p) {
      double norm = 0.0;
      for (Index d = 0; d < dim; ++d) {
        const double v = normal(rng);
        a(p, d) = static_cast<Scalar>(v);
        norm += v * v;
      }
      a.row(p) /= static_cast<Scalar>(std::sqrt(norm));
      class_ids_.push_back(shared ? kSharedPrototype
                                  : static_cast<int>(p / per_class));
    }
    // softplus(rho) = sigma - sigma_min
    const double rho = std::log(std::expm1(init.sigma - init.sigma_min));
    anchors_ = Tensor<Scalar>(std::move(a), true);
    mu_ = Tensor<Scalar>(
        MatrixX<Scalar>::Constant(1, total, static_cast<Scalar>(init.mu)), true);
    rho_ = Tensor<Scalar>(
        MatrixX<Scalar>::Constant(1, total, static_cast<Scalar>(rho)), true);
    num_classes_ = num_classes;
    per_class_ = per_class;
  }

  // sigma = softplus(rho) + sigma_min, shape [1, P].
  Tensor<Scalar> sigma() const {
    return add_scalar(softplus(rho_), static_cast<Scalar>(sigma_min_));
  }

  std::vector<double> sigma_values() const {
    NoGradGuard guard;
    const auto s = sigma();
    return std::vector<double>(s.value().data(), s.value().data() + s.size());
  }

  // Activation map [N, P] for embeddings z [N, D].
  Tensor<Scalar> Activate(const Tensor<Scalar>& z) const {
    if (z.cols() != anchors_.cols()) {
      throw ShapeError("prototype_activation: embedding dim " +
                       std::to_string(z.cols()) + " does not match anchor dim " +
                       std::to_string(anchors_.cols()));
    }
    return truncated_gaussian_pdf(cosine_similarity(z, anchors_), mu_, sigma());
  }

  // Keeps every mean inside the similarity range.
  void ClampMeans() {
    auto& m = mu_.mutable_value();
    m = m.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
  }

  // Prototype indices carrying class `c` (shared prototypes count for all).
  std::vector<Index> PrototypesOf(int c) const {
    std::vector<Index> out;
    for (std::size_t p = 0; p < class_ids_.size(); ++p) {
      if (class_ids_[p] == c || class_ids_[p] == kSharedPrototype) {
        out.push_back(static_cast<Index>(p));
      }
    }
    return out;
  }
  // Prototypes assigned to a different class; empty when all are shared.
  std::vector<Index> PrototypesNotOf(int c) const {
    std::vector<Index> out;
    for (std::size_t p = 0; p < class_ids_.size(); ++p) {
      if (class_ids_[p] != c && class_ids_[p] != kSharedPrototype) {
        out.push_back(static_cast<Index>(p));
      }
    }
    return out;
  }

  Index size() const { return static_cast<Index>(class_ids_.size()); }
  Index dim() const { return anchors_.cols(); }
  Index num_classes() const { return num_classes_; }
  Index per_class() const { return per_class_; }
  double sigma_min() const { return sigma_min_; }
  const std::vector<int>& class_ids() const { return class_ids_; }
  Tensor<Scalar>& anchors() { return anchors_; }
  Tensor<Scalar>& mu() { return mu_; }
  Tensor<Scalar>& rho() { return rho_; }
  const Tensor<Scalar>& anchors() const { return anchors_; }
  const Tensor<Scalar>& mu() const { return mu_; }
  const Tensor<Scalar>& rho() const { return rho_; }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    out.push_back({prefix + ".anchors", anchors_});
    out.push_back({prefix + ".mu", mu_});
    out.push_back({prefix + ".sigma_raw", rho_});
  }

 private:
  Tensor<Scalar> anchors_;
  Tensor<Scalar> mu_;
  Tensor<Scalar> rho_;
  std::vector<int> class_ids_;
  Index num_classes_ = 0;
  Index per_class_ = 0;
  double sigma_min_ = kDefaultSigmaMin;
};

enum class HeadMode { kMulticlass, kMultilabel };

// Linear map from activations to class logits followed by a row softmax
// (multi-class) or per-class sigmoid (multi-label).
template <typename Scalar>
class ClassificationHead {
 public:
  ClassificationHead() = default;

  template <typename Rng>
  ClassificationHead(Index in, Index num_classes, HeadMode mode, Rng& rng)
      : mode_(mode), linear_(in, num_classes, rng) {}

  // Own-class connections +1, others -0.5, zero bias.
  void InitFromClassIds(const std::vector<int>& class_ids) {
    auto& w = linear_.weight().mutable_value();
    for (Index p = 0; p < w.rows(); ++p) {
      for (Index a = 0; a < w.cols(); ++a) {
        w(p, a) = class_ids[static_cast<std::size_t>(p)] == a ? Scalar(1)
                                                              : Scalar(-0.5);
      }
    }
    linear_.bias().mutable_value().setZero();
  }

  template <typename Rng>
  void InitSmallRandom(Rng& rng, double stddev = 0.01) {
    std::normal_distribution<double> normal(0.0, stddev);
    auto& w = linear_.weight().mutable_value();
    for (Index i = 0; i < w.size(); ++i) {
      w.data()[i] = static_cast<Scalar>(normal(rng));
    }
    linear_.bias().mutable_value().setZero();
  }

  Tensor<Scalar> logits(const Tensor<Scalar>& acts) const {
    if (acts.cols() != linear_.in_features()) {
      throw ShapeError("classification_head: activation width " +
                       std::to_string(acts.cols()) + " vs expected " +
                       std::to_string(linear_.in_features()));
    }
    return linear_(acts);
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& acts) const {
    Tensor<Scalar> z = logits(acts);
    return mode_ == HeadMode::kMulticlass ? softmax(z) : sigmoid(z);
  }

  HeadMode mode() const { return mode_; }
  Linear<Scalar>& linear() { return linear_; }
  const Linear<Scalar>& linear() const { return linear_; }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    linear_.Collect(prefix, out);
  }

 private:
  HeadMode mode_ = HeadMode::kMulticlass;
  Linear<Scalar> linear_;
};

}  // namespace protoform

#endif  // PROTOFORM_PROTOTYPE_PROTOTYPE_LAYER_HPP_
