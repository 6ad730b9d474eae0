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

#ifndef PROTOFORM_AUTODIFF_ADAMW_HPP_
#define PROTOFORM_AUTODIFF_ADAMW_HPP_

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoform/autodiff/tensor.hpp"

namespace protoform {

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
};

// Adam with decoupled weight decay. Moment buffers are indexed in the order
// the parameters were passed to Init().
template <typename Scalar>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWOptions options) : options_(options) {}

  void Init(const std::vector<NamedTensor<Scalar>>& params) {
    first_.clear();
    second_.clear();
    for (const auto& p : params) {
      first_.push_back(MatrixX<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
      second_.push_back(MatrixX<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
    }
    step_ = 0;
  }

  void Step(std::vector<NamedTensor<Scalar>>& params) {
    if (params.size() != first_.size()) {
      throw std::logic_error("adamw: optimizer initialized for " +
                             std::to_string(first_.size()) +
                             " parameters, got " +
                             std::to_string(params.size()));
    }
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) {
        throw std::runtime_error("adamw: missing gradient for parameter '" +
                                 p.name + "'");
      }
    }
    ++step_;
    const Scalar lr = static_cast<Scalar>(options_.lr);
    const Scalar b1 = static_cast<Scalar>(options_.beta1);
    const Scalar b2 = static_cast<Scalar>(options_.beta2);
    const Scalar eps = static_cast<Scalar>(options_.eps);
    const Scalar decay =
        Scalar(1) - static_cast<Scalar>(options_.lr * options_.weight_decay);
    const Scalar bc1 = static_cast<Scalar>(
        1.0 - std::pow(options_.beta1, static_cast<double>(step_)));
    const Scalar bc2 = static_cast<Scalar>(
        1.0 - std::pow(options_.beta2, static_cast<double>(step_)));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = params[k].tensor.mutable_value();
      const auto& g = params[k].tensor.grad();
      auto& m = first_[k];
      auto& v = second_[k];
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
      if (options_.weight_decay != 0.0) w *= decay;
      w.array() -= lr * (m.array() / bc1) /
                   ((v.array() / bc2).sqrt() + eps);
    }
  }

  long long step() const { return step_; }
  void set_step(long long s) { step_ = s; }
  const AdamWOptions& options() const { return options_; }
  std::vector<MatrixX<Scalar>>& first_moments() { return first_; }
  std::vector<MatrixX<Scalar>>& second_moments() { return second_; }
  const std::vector<MatrixX<Scalar>>& first_moments() const { return first_; }
  const std::vector<MatrixX<Scalar>>& second_moments() const { return second_; }

 private:
  AdamWOptions options_;
  std::vector<MatrixX<Scalar>> first_;
  std::vector<MatrixX<Scalar>> second_;
  long long step_ = 0;
};

}  // namespace protoform

#endif  // PROTOFORM_AUTODIFF_ADAMW_HPP_
