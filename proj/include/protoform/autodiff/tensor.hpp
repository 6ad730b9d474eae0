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

#ifndef PROTOFORM_AUTODIFF_TENSOR_HPP_
#define PROTOFORM_AUTODIFF_TENSOR_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace protoform {

using Index = Eigen::Index;

// All tensor storage is a row-major dense matrix. Tensors of rank > 2 collapse
// their leading dimensions into rows; rank 0 and rank 1 tensors are a single
// row.
template <typename Scalar>
using MatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline Index ShapeSize(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         std::multiplies<Index>());
}

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Enabled()) { Enabled() = false; }
  ~NoGradGuard() { Enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool& Enabled() {
    thread_local bool enabled = true;
    return enabled;
  }

 private:
  bool previous_;
};

namespace detail {

inline std::uint64_t NextSequence() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

template <typename Scalar>
struct Node {
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;
  Shape shape;
  bool requires_grad = false;
  bool released = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  template <typename Derived>
  void Accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using Matrix = MatrixX<Scalar>;
  using NodeType = detail::Node<Scalar>;

  Tensor() = default;

  explicit Tensor(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    node_->shape = {value.rows(), value.cols()};
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->seq = detail::NextSequence();
  }

  Tensor(Shape shape, const std::vector<Scalar>& values,
         bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    if (ShapeSize(shape) != static_cast<Index>(values.size())) {
      throw ShapeError("tensor: shape " + ShapeString(shape) + " needs " +
                       std::to_string(ShapeSize(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    const auto [rows, cols] = MatrixDims(shape);
    node_->value = Eigen::Map<const Matrix>(values.data(), rows, cols);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
    node_->seq = detail::NextSequence();
  }

  static Tensor Scalar0(Scalar v, bool requires_grad = false) {
    Tensor t(Shape{}, std::vector<Scalar>{v}, requires_grad);
    return t;
  }

  static Tensor Zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix::Zero(rows, cols), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  // Direct access for optimizers and initializers. Never mutate a tensor
  // that is part of a live graph.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  const Shape& shape() const { return node_->shape; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  std::uint64_t id() const { return node_->seq; }

  Scalar item() const {
    if (size() != 1) {
      throw ShapeError("item: tensor of shape " + ShapeString(shape()) +
                       " is not a scalar");
    }
    return node_->value(0, 0);
  }

  Tensor detach() const { return Tensor(node_->value, false); }

  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Reverse-mode pass from a scalar. Leaf gradients accumulate; the graph is
  // consumed, and a second call on it raises GraphError.
  void backward() const;

  NodeType* node() const { return node_.get(); }
  const std::shared_ptr<NodeType>& node_ptr() const { return node_; }

  static std::pair<Index, Index> MatrixDims(const Shape& shape) {
    if (shape.empty()) return {1, 1};
    if (shape.size() == 1) return {1, shape[0]};
    Index rows = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
    return {rows, shape.back()};
  }

 private:
  template <typename S, typename Fn>
  friend Tensor<S> MakeOp(const char* op, MatrixX<S> value,
                          std::vector<Tensor<S>> inputs, Fn backward);
  template <typename S>
  friend Tensor<S> WithShape(Tensor<S> t, Shape shape);

  std::shared_ptr<NodeType> node_;
};

// Records `value` as the output of `op` applied to `inputs`. `backward` is
// invoked as backward(out_node, input_nodes...) via a captured vector.
template <typename Scalar, typename Fn>
Tensor<Scalar> MakeOp(const char* op, MatrixX<Scalar> value,
                      std::vector<Tensor<Scalar>> inputs, Fn backward) {
  Tensor<Scalar> out(std::move(value), false);
  out.node_->op = op;
  if (!NoGradGuard::Enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) {
    if (in.node()->released) {
      throw GraphError(std::string(op) +
                       ": input belongs to a graph that was already consumed "
                       "by backward()");
    }
    any = any || in.requires_grad();
  }
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.node_ptr());
  node.backward = [fn = std::move(backward)](detail::Node<Scalar>& self) {
    fn(self.grad, self.inputs);
  };
  return out;
}

template <typename Scalar>
Tensor<Scalar> WithShape(Tensor<Scalar> t, Shape shape) {
  t.node_->shape = std::move(shape);
  return t;
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     ShapeString(shape()));
  }
  if (node_->released) {
    throw GraphError("backward: graph already consumed; run forward again");
  }
  if (!node_->requires_grad) return;

  // Collect the reachable sub-graph. Sequence numbers are assigned at
  // creation so descending order is a valid reverse topological order.
  // Holding shared ownership keeps intermediate nodes alive while their
  // consumers drop input references below.
  std::vector<std::shared_ptr<NodeType>> order;
  std::vector<std::shared_ptr<NodeType>> stack{node_};
  std::unordered_set<const NodeType*> seen;
  while (!stack.empty()) {
    std::shared_ptr<NodeType> n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    if (n->released) {
      throw GraphError("backward: graph already consumed; run forward again");
    }
    for (const auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  node_->Accumulate(Matrix::Ones(1, 1));
  for (const auto& n : order) {
    if (n->inputs.empty()) continue;
    if (n->grad.size() != 0) n->backward(*n);
    n->backward = nullptr;
    n->inputs.clear();
    n->released = true;
  }
}

}  // namespace protoform

#endif  // PROTOFORM_AUTODIFF_TENSOR_HPP_
