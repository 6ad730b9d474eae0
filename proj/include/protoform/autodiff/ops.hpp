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

// Differentiable operations over Tensor<Scalar>. Every op works on the 2-D
// row-major view of its inputs. Elementwise binary ops broadcast singleton
// rows/columns.

#ifndef PROTOFORM_AUTODIFF_OPS_HPP_
#define PROTOFORM_AUTODIFF_OPS_HPP_

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "protoform/autodiff/tensor.hpp"

namespace protoform {

// Floor applied to log arguments and to divisor magnitudes.
inline constexpr double kLogDivFloor = 1e-12;

namespace detail {

template <typename Scalar>
using NodeList = std::vector<std::shared_ptr<Node<Scalar>>>;

inline std::string DimsString(Index r, Index c) {
  return "[" + std::to_string(r) + "," + std::to_string(c) + "]";
}

[[noreturn]] inline void ThrowShape(const char* op, Index r1, Index c1,
                                    Index r2, Index c2) {
  throw ShapeError(std::string(op) + ": shape mismatch " + DimsString(r1, c1) +
                   " vs " + DimsString(r2, c2));
}

template <typename Scalar>
Scalar ClampDivisor(Scalar b) {
  const Scalar floor = static_cast<Scalar>(kLogDivFloor);
  if (std::abs(b) >= floor) return b;
  return b < Scalar(0) ? -floor : floor;
}

// Reduces `g` (rows x cols) back to (rows_in x cols_in) by summing over
// broadcast dimensions.
template <typename Scalar>
MatrixX<Scalar> ReduceTo(const MatrixX<Scalar>& g, Index rows_in,
                         Index cols_in) {
  if (g.rows() == rows_in && g.cols() == cols_in) return g;
  if (rows_in == 1 && cols_in == 1) {
    return MatrixX<Scalar>::Constant(1, 1, g.sum());
  }
  if (rows_in == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

}  // namespace detail

// Broadcasts a [1|R, 1|C] tensor to [R, C].
template <typename Scalar>
Tensor<Scalar> broadcast_to(const Tensor<Scalar>& x, Index rows, Index cols) {
  const Index r = x.rows(), c = x.cols();
  if ((r != rows && r != 1) || (c != cols && c != 1)) {
    detail::ThrowShape("broadcast", r, c, rows, cols);
  }
  if (r == rows && c == cols) return x;
  MatrixX<Scalar> out = x.value().replicate(rows / r, cols / c);
  return MakeOp<Scalar>("broadcast", std::move(out), {x},
                        [r, c](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(detail::ReduceTo<Scalar>(g, r, c));
                        });
}

namespace detail {

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> Broadcast2(const char* op,
                                                     const Tensor<Scalar>& a,
                                                     const Tensor<Scalar>& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a, b};
  const auto fits = [](Index x, Index y) { return x == y || x == 1 || y == 1; };
  if (!fits(a.rows(), b.rows()) || !fits(a.cols(), b.cols())) {
    ThrowShape(op, a.rows(), a.cols(), b.rows(), b.cols());
  }
  const Index rows = std::max(a.rows(), b.rows());
  const Index cols = std::max(a.cols(), b.cols());
  return {broadcast_to(a, rows, cols), broadcast_to(b, rows, cols)};
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a0, const Tensor<Scalar>& b0) {
  auto [a, b] = detail::Broadcast2("add", a0, b0);
  return MakeOp<Scalar>("add", a.value() + b.value(), {a, b},
                        [](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(g);
                          in[1]->Accumulate(g);
                        });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a0, const Tensor<Scalar>& b0) {
  auto [a, b] = detail::Broadcast2("sub", a0, b0);
  return MakeOp<Scalar>("sub", a.value() - b.value(), {a, b},
                        [](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(g);
                          in[1]->Accumulate(-g);
                        });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a0, const Tensor<Scalar>& b0) {
  auto [a, b] = detail::Broadcast2("mul", a0, b0);
  MatrixX<Scalar> out = a.value().cwiseProduct(b.value());
  return MakeOp<Scalar>(
      "mul", std::move(out), {a, b}, [](const MatrixX<Scalar>& g, auto& in) {
        if (in[0]->requires_grad) in[0]->Accumulate(g.cwiseProduct(in[1]->value));
        if (in[1]->requires_grad) in[1]->Accumulate(g.cwiseProduct(in[0]->value));
      });
}

// a / b with |b| floored at kLogDivFloor. The floor acts as identity in the
// backward pass.
template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a0, const Tensor<Scalar>& b0) {
  auto [a, b] = detail::Broadcast2("div", a0, b0);
  MatrixX<Scalar> denom =
      b.value().unaryExpr([](Scalar v) { return detail::ClampDivisor(v); });
  MatrixX<Scalar> out = a.value().cwiseQuotient(denom);
  return MakeOp<Scalar>(
      "div", std::move(out), {a, b},
      [denom = std::move(denom)](const MatrixX<Scalar>& g, auto& in) {
        if (in[0]->requires_grad) in[0]->Accumulate(g.cwiseQuotient(denom));
        if (in[1]->requires_grad) {
          in[1]->Accumulate(-g.cwiseProduct(in[0]->value)
                                 .cwiseQuotient(denom.cwiseAbs2()));
        }
      });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return div(a, b);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  return MakeOp<Scalar>("scale", x.value() * factor, {x},
                        [factor](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(g * factor);
                        });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar offset) {
  MatrixX<Scalar> out = x.value().array() + offset;
  return MakeOp<Scalar>("add_scalar", std::move(out), {x},
                        [](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(g);
                        });
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& x) {
  return scale(x, Scalar(-1));
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    detail::ThrowShape("matmul", a.rows(), a.cols(), b.rows(), b.cols());
  }
  MatrixX<Scalar> out = a.value() * b.value();
  return MakeOp<Scalar>(
      "matmul", std::move(out), {a, b}, [](const MatrixX<Scalar>& g, auto& in) {
        if (in[0]->requires_grad) {
          in[0]->Accumulate(g * in[1]->value.transpose());
        }
        if (in[1]->requires_grad) {
          in[1]->Accumulate(in[0]->value.transpose() * g);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().cwiseMax(Scalar(0));
  return MakeOp<Scalar>(
      "relu", std::move(out), {x}, [](const MatrixX<Scalar>& g, auto& in) {
        in[0]->Accumulate(
            (in[0]->value.array() > Scalar(0)).select(g, Scalar(0)).matrix());
      });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().array().exp();
  return MakeOp<Scalar>("exp", out, {x},
                        [out](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(g.cwiseProduct(out));
                        });
}

// Natural log of max(x, kLogDivFloor).
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  const Scalar floor = static_cast<Scalar>(kLogDivFloor);
  MatrixX<Scalar> clamped = x.value().cwiseMax(floor);
  MatrixX<Scalar> out = clamped.array().log();
  return MakeOp<Scalar>(
      "log", std::move(out), {x},
      [clamped = std::move(clamped)](const MatrixX<Scalar>& g, auto& in) {
        in[0]->Accumulate(g.cwiseQuotient(clamped));
      });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().cwiseMax(Scalar(0)).cwiseSqrt();
  return MakeOp<Scalar>(
      "sqrt", out, {x}, [out](const MatrixX<Scalar>& g, auto& in) {
        const Scalar floor = static_cast<Scalar>(kLogDivFloor);
        in[0]->Accumulate(
            (g.array() / (Scalar(2) * out.array().max(floor))).matrix());
      });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().unaryExpr([](Scalar v) {
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return MakeOp<Scalar>(
      "sigmoid", out, {x}, [out](const MatrixX<Scalar>& g, auto& in) {
        in[0]->Accumulate(
            (g.array() * out.array() * (Scalar(1) - out.array())).matrix());
      });
}

// log(1 + exp(x)), overflow-safe.
template <typename Scalar>
Tensor<Scalar> softplus(const Tensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().unaryExpr([](Scalar v) {
    return std::max(v, Scalar(0)) + std::log1p(std::exp(-std::abs(v)));
  });
  return MakeOp<Scalar>(
      "softplus", std::move(out), {x}, [](const MatrixX<Scalar>& g, auto& in) {
        MatrixX<Scalar> s = in[0]->value.unaryExpr([](Scalar v) {
          if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
          const Scalar e = std::exp(v);
          return e / (Scalar(1) + e);
        });
        in[0]->Accumulate(g.cwiseProduct(s));
      });
}

// Elementwise clamp into [lo, hi]; zero gradient outside the interval.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& x, Scalar lo, Scalar hi) {
  MatrixX<Scalar> out = x.value().cwiseMax(lo).cwiseMin(hi);
  return MakeOp<Scalar>(
      "clamp", std::move(out), {x}, [lo, hi](const MatrixX<Scalar>& g, auto& in) {
        const auto& v = in[0]->value.array();
        in[0]->Accumulate(((v >= lo) && (v <= hi)).select(g, Scalar(0)).matrix());
      });
}

// Sum of all entries.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  const Index r = x.rows(), c = x.cols();
  return WithShape(
      MakeOp<Scalar>("sum", MatrixX<Scalar>::Constant(1, 1, x.value().sum()),
                     {x},
                     [r, c](const MatrixX<Scalar>& g, auto& in) {
                       in[0]->Accumulate(MatrixX<Scalar>::Constant(r, c, g(0, 0)));
                     }),
      Shape{});
}

// axis 0 sums over rows (result 1 x C); axis 1 over columns (R x 1).
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x, int axis) {
  const Index r = x.rows(), c = x.cols();
  if (axis == 0) {
    return MakeOp<Scalar>("sum", x.value().colwise().sum(), {x},
                          [r](const MatrixX<Scalar>& g, auto& in) {
                            in[0]->Accumulate(g.replicate(r, 1));
                          });
  }
  if (axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  return MakeOp<Scalar>("sum", x.value().rowwise().sum(), {x},
                        [c](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(g.replicate(1, c));
                        });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x, int axis) {
  const Index n = axis == 0 ? x.rows() : x.cols();
  if (n == 0) throw ShapeError("mean: empty reduction");
  return scale(sum(x, axis), Scalar(1) / static_cast<Scalar>(n));
}

// Maximum over all entries; gradient flows to the first maximal entry.
template <typename Scalar>
Tensor<Scalar> max(const Tensor<Scalar>& x) {
  if (x.size() == 0) throw ShapeError("max: empty tensor");
  Index best = 0;
  const Scalar* data = x.value().data();
  for (Index i = 1; i < x.size(); ++i) {
    if (data[i] > data[best]) best = i;
  }
  const Index r = x.rows(), c = x.cols();
  return WithShape(
      MakeOp<Scalar>("max", MatrixX<Scalar>::Constant(1, 1, data[best]), {x},
                     [r, c, best](const MatrixX<Scalar>& g, auto& in) {
                       MatrixX<Scalar> d = MatrixX<Scalar>::Zero(r, c);
                       d.data()[best] = g(0, 0);
                       in[0]->Accumulate(d);
                     }),
      Shape{});
}

// Max over consecutive blocks of `group` rows: [G*group, C] -> [G, C].
// With group == rows this is the column-wise max.
template <typename Scalar>
Tensor<Scalar> max_groups(const Tensor<Scalar>& x, Index group) {
  if (group <= 0 || x.rows() % group != 0) {
    throw ShapeError("max_groups: " + std::to_string(x.rows()) +
                     " rows not divisible into groups of " +
                     std::to_string(group));
  }
  const Index groups = x.rows() / group, c = x.cols();
  MatrixX<Scalar> out(groups, c);
  std::vector<Index> arg(static_cast<std::size_t>(groups * c));
  const auto& v = x.value();
  for (Index gi = 0; gi < groups; ++gi) {
    const Index base = gi * group;
    for (Index j = 0; j < c; ++j) {
      Index best = base;
      for (Index i = base + 1; i < base + group; ++i) {
        if (v(i, j) > v(best, j)) best = i;
      }
      out(gi, j) = v(best, j);
      arg[static_cast<std::size_t>(gi * c + j)] = best;
    }
  }
  const Index r = x.rows();
  return MakeOp<Scalar>(
      "max_groups", std::move(out), {x},
      [arg = std::move(arg), r, c, groups](const MatrixX<Scalar>& g, auto& in) {
        MatrixX<Scalar> d = MatrixX<Scalar>::Zero(r, c);
        for (Index gi = 0; gi < groups; ++gi) {
          for (Index j = 0; j < c; ++j) {
            d(arg[static_cast<std::size_t>(gi * c + j)], j) += g(gi, j);
          }
        }
        in[0]->Accumulate(d);
      });
}

// Row-wise softmax.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value();
  for (Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return MakeOp<Scalar>(
      "softmax", out, {x}, [out](const MatrixX<Scalar>& g, auto& in) {
        MatrixX<Scalar> dot = g.cwiseProduct(out).rowwise().sum();
        MatrixX<Scalar> d =
            out.cwiseProduct(g - dot.replicate(1, out.cols()));
        in[0]->Accumulate(d);
      });
}

// Concatenates along columns (axis 1) or rows (axis 0).
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Index rows = 0, cols = 0;
  std::vector<Index> extents;
  for (const auto& p : parts) {
    if (axis == 1) {
      if (p.rows() != parts[0].rows()) {
        detail::ThrowShape("concat", parts[0].rows(), parts[0].cols(),
                           p.rows(), p.cols());
      }
      extents.push_back(p.cols());
      cols += p.cols();
      rows = p.rows();
    } else {
      if (p.cols() != parts[0].cols()) {
        detail::ThrowShape("concat", parts[0].rows(), parts[0].cols(),
                           p.rows(), p.cols());
      }
      extents.push_back(p.rows());
      rows += p.rows();
      cols = p.cols();
    }
  }
  MatrixX<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    if (axis == 1) {
      out.middleCols(at, p.cols()) = p.value();
      at += p.cols();
    } else {
      out.middleRows(at, p.rows()) = p.value();
      at += p.rows();
    }
  }
  return MakeOp<Scalar>(
      "concat", std::move(out), parts,
      [extents = std::move(extents), axis](const MatrixX<Scalar>& g, auto& in) {
        Index off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const Index e = extents[k];
          if (in[k]->requires_grad) {
            if (axis == 1) {
              in[k]->Accumulate(g.middleCols(off, e));
            } else {
              in[k]->Accumulate(g.middleRows(off, e));
            }
          }
          off += e;
        }
      });
}

// Selects rows by index: out[k] = x[index[k]].
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const Index> index) {
  const Index n = static_cast<Index>(index.size()), r = x.rows(), c = x.cols();
  MatrixX<Scalar> out(n, c);
  for (Index k = 0; k < n; ++k) {
    const Index i = index[static_cast<std::size_t>(k)];
    if (i < 0 || i >= r) {
      throw std::out_of_range("gather: index " + std::to_string(i) +
                              " out of range for " + std::to_string(r) +
                              " rows");
    }
    out.row(k) = x.value().row(i);
  }
  std::vector<Index> idx(index.begin(), index.end());
  return MakeOp<Scalar>(
      "gather", std::move(out), {x},
      [idx = std::move(idx), r, c](const MatrixX<Scalar>& g, auto& in) {
        MatrixX<Scalar> d = MatrixX<Scalar>::Zero(r, c);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          d.row(idx[k]) += g.row(static_cast<Index>(k));
        }
        in[0]->Accumulate(d);
      });
}

// Selects entries by flat row-major index into a [1, n] tensor.
template <typename Scalar>
Tensor<Scalar> take(const Tensor<Scalar>& x, std::span<const Index> flat) {
  const Index n = static_cast<Index>(flat.size()), r = x.rows(), c = x.cols();
  MatrixX<Scalar> out(1, n);
  for (Index k = 0; k < n; ++k) {
    const Index i = flat[static_cast<std::size_t>(k)];
    if (i < 0 || i >= x.size()) {
      throw std::out_of_range("gather: index " + std::to_string(i) +
                              " out of range for " + std::to_string(x.size()) +
                              " entries");
    }
    out(0, k) = x.value().data()[i];
  }
  std::vector<Index> idx(flat.begin(), flat.end());
  return MakeOp<Scalar>(
      "take", std::move(out), {x},
      [idx = std::move(idx), r, c](const MatrixX<Scalar>& g, auto& in) {
        MatrixX<Scalar> d = MatrixX<Scalar>::Zero(r, c);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          d.data()[idx[k]] += g(0, static_cast<Index>(k));
        }
        in[0]->Accumulate(d);
      });
}

// out[index[k]] += x[k]; result has `out_rows` rows.
template <typename Scalar>
Tensor<Scalar> scatter_add_rows(const Tensor<Scalar>& x,
                                std::span<const Index> index, Index out_rows) {
  if (static_cast<Index>(index.size()) != x.rows()) {
    throw ShapeError("scatter_add: " + std::to_string(index.size()) +
                     " indices for " + std::to_string(x.rows()) + " rows");
  }
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(out_rows, x.cols());
  for (Index k = 0; k < x.rows(); ++k) {
    const Index i = index[static_cast<std::size_t>(k)];
    if (i < 0 || i >= out_rows) {
      throw std::out_of_range("scatter_add: index " + std::to_string(i) +
                              " out of range for " + std::to_string(out_rows) +
                              " rows");
    }
    out.row(i) += x.value().row(k);
  }
  std::vector<Index> idx(index.begin(), index.end());
  return MakeOp<Scalar>(
      "scatter_add", std::move(out), {x},
      [idx = std::move(idx)](const MatrixX<Scalar>& g, auto& in) {
        MatrixX<Scalar> d(static_cast<Index>(idx.size()), g.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
          d.row(static_cast<Index>(k)) = g.row(idx[k]);
        }
        in[0]->Accumulate(d);
      });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  MatrixX<Scalar> out = x.value().transpose();
  return MakeOp<Scalar>("transpose", std::move(out), {x},
                        [](const MatrixX<Scalar>& g, auto& in) {
                          in[0]->Accumulate(g.transpose());
                        });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (ShapeSize(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + ShapeString(x.shape()) +
                     " as " + ShapeString(shape));
  }
  const auto [rows, cols] = Tensor<Scalar>::MatrixDims(shape);
  MatrixX<Scalar> out =
      Eigen::Map<const MatrixX<Scalar>>(x.value().data(), rows, cols);
  const Index r = x.rows(), c = x.cols();
  return WithShape(MakeOp<Scalar>("reshape", std::move(out), {x},
                                  [r, c](const MatrixX<Scalar>& g, auto& in) {
                                    in[0]->Accumulate(
                                        Eigen::Map<const MatrixX<Scalar>>(
                                            g.data(), r, c));
                                  }),
                   std::move(shape));
}

// Running statistics of a batch-normalization layer.
template <typename Scalar>
struct BatchNormStats {
  MatrixX<Scalar> running_mean;
  MatrixX<Scalar> running_var;
};

struct BatchNormOptions {
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

// Per-column batch normalization with affine parameters gamma/beta of shape
// [1, C]. In training mode the batch statistics are used and the running
// statistics updated; otherwise the running statistics are used.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta,
                          BatchNormStats<Scalar>& stats, bool training,
                          const BatchNormOptions& opt = {}) {
  const Index n = x.rows(), c = x.cols();
  if (gamma.cols() != c || beta.cols() != c || gamma.rows() != 1 ||
      beta.rows() != 1) {
    detail::ThrowShape("batchnorm", n, c, gamma.rows(), gamma.cols());
  }
  const Scalar eps = static_cast<Scalar>(opt.eps);
  MatrixX<Scalar> mu, var;
  if (training) {
    if (n < 2) throw ShapeError("batchnorm: training needs at least 2 rows");
    mu = x.value().colwise().mean();
    var = (x.value().rowwise() - mu.row(0)).cwiseAbs2().colwise().mean();
    const Scalar m = static_cast<Scalar>(opt.momentum);
    const Scalar unbias = static_cast<Scalar>(n) / static_cast<Scalar>(n - 1);
    stats.running_mean = m * stats.running_mean + (Scalar(1) - m) * mu;
    stats.running_var = m * stats.running_var + (Scalar(1) - m) * unbias * var;
  } else {
    mu = stats.running_mean;
    var = stats.running_var;
  }
  MatrixX<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();
  MatrixX<Scalar> xhat =
      ((x.value().rowwise() - mu.row(0)).array().rowwise() *
       inv_std.row(0).array())
          .matrix();
  MatrixX<Scalar> out =
      ((xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
       beta.value().row(0).array())
          .matrix();
  return MakeOp<Scalar>(
      "batchnorm", std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), training, n](
          const MatrixX<Scalar>& g, auto& in) {
        const auto& gam = in[1]->value;
        if (in[1]->requires_grad) {
          in[1]->Accumulate(g.cwiseProduct(xhat).colwise().sum());
        }
        if (in[2]->requires_grad) in[2]->Accumulate(g.colwise().sum());
        if (!in[0]->requires_grad) return;
        MatrixX<Scalar> gx =
            (g.array().rowwise() * gam.row(0).array()).matrix();
        if (!training) {
          in[0]->Accumulate(
              (gx.array().rowwise() * inv_std.row(0).array()).matrix());
          return;
        }
        const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
        MatrixX<Scalar> mean_g = gx.colwise().sum() * inv_n;
        MatrixX<Scalar> mean_gx = gx.cwiseProduct(xhat).colwise().sum() * inv_n;
        MatrixX<Scalar> d =
            ((gx.array().rowwise() - mean_g.row(0).array()) -
             xhat.array().rowwise() * mean_gx.row(0).array())
                .rowwise() *
            inv_std.row(0).array();
        in[0]->Accumulate(d);
      });
}

// Global L2 norm over a set of gradient buffers.
template <typename Scalar>
double GlobalGradNorm(const std::vector<Tensor<Scalar>>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (p.has_grad()) acc += p.grad().template cast<double>().squaredNorm();
  }
  return std::sqrt(acc);
}

}  // namespace protoform

#endif  // PROTOFORM_AUTODIFF_OPS_HPP_
