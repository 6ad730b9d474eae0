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

#ifndef PROTOFORM_BACKBONES_LAYERS_HPP_
#define PROTOFORM_BACKBONES_LAYERS_HPP_

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "protoform/autodiff/adamw.hpp"
#include "protoform/autodiff/ops.hpp"

namespace protoform {

template <typename Scalar>
using ParamList = std::vector<NamedTensor<Scalar>>;

template <typename Scalar>
struct NamedBuffer {
  std::string name;
  MatrixX<Scalar>* buffer;
};

template <typename Scalar>
using BufferList = std::vector<NamedBuffer<Scalar>>;

// y = x W + b with W of shape [in, out].
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  template <typename Rng>
  Linear(Index in, Index out, Rng& rng, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    MatrixX<Scalar> w(in, out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(u(rng));
    weight_ = Tensor<Scalar>(std::move(w), true);
    if (bias) {
      MatrixX<Scalar> b(1, out);
      for (Index i = 0; i < out; ++i) b(0, i) = static_cast<Scalar>(u(rng));
      bias_ = Tensor<Scalar>(std::move(b), true);
    }
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    Tensor<Scalar> y = matmul(x, weight_);
    return bias_.defined() ? add(y, bias_) : y;
  }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    out.push_back({prefix + ".weight", weight_});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
  }

  Tensor<Scalar>& weight() { return weight_; }
  Tensor<Scalar>& bias() { return bias_; }
  const Tensor<Scalar>& weight() const { return weight_; }
  const Tensor<Scalar>& bias() const { return bias_; }
  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }

 private:
  Tensor<Scalar> weight_;
  Tensor<Scalar> bias_;
};

template <typename Scalar>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(Index channels)
      : gamma_(MatrixX<Scalar>::Ones(1, channels), true),
        beta_(MatrixX<Scalar>::Zero(1, channels), true) {
    stats_.running_mean = MatrixX<Scalar>::Zero(1, channels);
    stats_.running_var = MatrixX<Scalar>::Ones(1, channels);
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool training) {
    return batch_norm(x, gamma_, beta_, stats_, training);
  }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
  }
  void CollectBuffers(const std::string& prefix, BufferList<Scalar>& out) {
    out.push_back({prefix + ".running_mean", &stats_.running_mean});
    out.push_back({prefix + ".running_var", &stats_.running_var});
  }

 private:
  Tensor<Scalar> gamma_;
  Tensor<Scalar> beta_;
  BatchNormStats<Scalar> stats_;
};

// Point-wise MLP: Linear -> BatchNorm -> ReLU per layer. With
// `linear_last` the final layer is a bare Linear.
template <typename Scalar>
class SharedMlp {
 public:
  SharedMlp() = default;
  template <typename Rng>
  SharedMlp(Index in, const std::vector<Index>& widths, Rng& rng,
            bool linear_last = false)
      : linear_last_(linear_last) {
    Index prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const bool bare = linear_last && i + 1 == widths.size();
      linears_.emplace_back(prev, widths[i], rng, /*bias=*/bare);
      if (!bare) norms_.emplace_back(widths[i]);
      prev = widths[i];
    }
  }

  Tensor<Scalar> operator()(Tensor<Scalar> x, bool training) {
    for (std::size_t i = 0; i < linears_.size(); ++i) {
      x = linears_[i](x);
      if (i < norms_.size()) x = relu(norms_[i](x, training));
    }
    return x;
  }

  Index out_features() const {
    return linears_.empty() ? 0 : linears_.back().out_features();
  }

  void Collect(const std::string& prefix, ParamList<Scalar>& out) const {
    for (std::size_t i = 0; i < linears_.size(); ++i) {
      linears_[i].Collect(prefix + "." + std::to_string(i) + ".linear", out);
      if (i < norms_.size()) {
        norms_[i].Collect(prefix + "." + std::to_string(i) + ".bn", out);
      }
    }
  }
  void CollectBuffers(const std::string& prefix, BufferList<Scalar>& out) {
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      norms_[i].CollectBuffers(prefix + "." + std::to_string(i) + ".bn", out);
    }
  }

 private:
  std::vector<Linear<Scalar>> linears_;
  std::vector<BatchNorm<Scalar>> norms_;
  bool linear_last_ = false;
};

}  // namespace protoform

#endif  // PROTOFORM_BACKBONES_LAYERS_HPP_
