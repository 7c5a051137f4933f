/*
 * Copyright 2026 The attnaudit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef ATTNAUDIT_AUTODIFF_H_
#define ATTNAUDIT_AUTODIFF_H_

// Define-by-run reverse-mode differentiation over rank <= 2 tensors.
//
// A Tape is an append-only list of nodes. Each recording method computes the
// forward value immediately, caches it on the node and returns a handle (Var).
// Because node ids only grow, reverse id order is a valid topological order
// and Backward() needs no graph sort.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "attnaudit/numerics.h"

namespace attnaudit {

struct Var {
  size_t id = static_cast<size_t>(-1);
  bool valid() const { return id != static_cast<size_t>(-1); }
};

enum class OpKind {
  kLeaf,
  kMatVec,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kTanh,
  kSigmoid,
  kConcat,
  kSlice,
  kDot,
  kWeightedSum,
  kSoftmax,
  kLogSoftmax,
  kLog,
  kMaxSelect,
  kDropout,
};

const char* OpKindName(OpKind kind);

class GradMap {
 public:
  // Gradient for `v`; zeros of the node's shape if no path reaches it.
  Tensor Get(Var v) const;
  // nullptr when the gradient is identically zero.
  const Tensor* Find(Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<std::pair<size_t, size_t>> shapes_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var Leaf(Tensor value);
  Var Leaf(std::span<const double> vector_values);

  Var MatVec(Var m, Var v);
  Var MatMul(Var a, Var b);
  Var Add(Var a, Var b);
  Var Sub(Var a, Var b);
  // Elementwise product.
  Var Mul(Var a, Var b);
  Var Scale(Var a, double factor);
  Var Tanh(Var a);
  Var Sigmoid(Var a);
  // Stacks column vectors (scalars included) into one column vector.
  Var Concat(std::span<const Var> parts);
  Var Slice(Var v, size_t offset, size_t length);
  // Scalar dot product of two vectors.
  Var Dot(Var a, Var b);
  // sum_i weights[i] * vectors[i].
  Var WeightedSum(Var weights, std::span<const Var> vectors);
  Var Softmax(Var v);
  Var LogSoftmax(Var v);
  Var Log(Var a);
  // Scalar: the maximal entry (lowest index on ties).
  Var MaxSelect(Var v);
  // Elementwise multiply by a constant mask (0 or 1/keep_prob entries).
  Var DropoutMaskApply(Var v, Tensor mask);

  // The reference is invalidated by recording further nodes.
  const Tensor& value(Var v) const;
  size_t size() const { return nodes_.size(); }
  OpKind kind(Var v) const { return node(v).op; }

  // Reverse accumulation from a scalar output. The tape is not modified, so
  // calling Backward twice yields identical results.
  GradMap Backward(Var output) const;

 private:
  struct Node {
    OpKind op = OpKind::kLeaf;
    std::vector<size_t> inputs;
    Tensor value;
    // Dropout mask.
    Tensor aux;
    // Slice offset or selected index.
    size_t index = 0;
    double factor = 0.0;
  };

  const Node& node(Var v) const;
  Var Push(Node node);
  void BackwardNode(const Node& n, const Tensor& upstream,
                    std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
};

// Builds a scalar function of one vector input on a fresh tape.
using TapeFunction = std::function<Var(Tape&, Var input)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Relative error |a - b| / max(|a|, |b|, 1e-8).
double RelativeError(double a, double b);

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps against the
// gradient Backward() produces for the same function.
GradCheckResult FiniteDiffCheck(const TapeFunction& f,
                                std::span<const double> x, double eps);

// Same check against a caller-supplied analytic gradient.
GradCheckResult FiniteDiffCheck(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, std::span<const double> analytic, double eps);

}  // namespace attnaudit

#endif  // ATTNAUDIT_AUTODIFF_H_
