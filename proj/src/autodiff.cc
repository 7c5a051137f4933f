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

#include "attnaudit/autodiff.h"

#include <algorithm>
#include <cmath>

#include "attnaudit/error.h"
#include "fmt/format.h"

namespace attnaudit {

const char* OpKindName(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf:
      return "leaf";
    case OpKind::kMatVec:
      return "matvec";
    case OpKind::kMatMul:
      return "matmul";
    case OpKind::kAdd:
      return "add";
    case OpKind::kSub:
      return "sub";
    case OpKind::kMul:
      return "mul";
    case OpKind::kScale:
      return "scale";
    case OpKind::kTanh:
      return "tanh";
    case OpKind::kSigmoid:
      return "sigmoid";
    case OpKind::kConcat:
      return "concat";
    case OpKind::kSlice:
      return "slice";
    case OpKind::kDot:
      return "dot";
    case OpKind::kWeightedSum:
      return "weighted_sum";
    case OpKind::kSoftmax:
      return "softmax";
    case OpKind::kLogSoftmax:
      return "log_softmax";
    case OpKind::kLog:
      return "log";
    case OpKind::kMaxSelect:
      return "max_select";
    case OpKind::kDropout:
      return "dropout_mask_apply";
  }
  return "unknown";
}

namespace {

[[noreturn]] void ShapeError(OpKind op, const std::string& detail) {
  throw Error(ErrorCode::kShapeMismatch,
              fmt::format("{}: shape mismatch: {}", OpKindName(op), detail));
}

void RequireVector(OpKind op, const Tensor& t, const char* what) {
  if (!t.is_vector() || t.empty()) {
    ShapeError(op, fmt::format("{} must be a non-empty column vector, got {}",
                               what, t.ShapeString()));
  }
}

void RequireSameShape(OpKind op, const Tensor& a, const Tensor& b) {
  if (!a.SameShape(b)) {
    ShapeError(op, fmt::format("{} vs {}", a.ShapeString(), b.ShapeString()));
  }
}

void AddInto(Tensor& dst, const Tensor& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor GradMap::Get(Var v) const {
  if (const Tensor* g = Find(v)) return *g;
  const auto [rows, cols] = shapes_.at(v.id);
  return Tensor(rows, cols);
}

const Tensor* GradMap::Find(Var v) const {
  if (v.id >= grads_.size() || grads_[v.id].empty()) return nullptr;
  return &grads_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("tape: invalid var id {}", v.id));
  }
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Var Tape::Push(Node n) {
  if (!n.value.AllFinite()) {
    throw Error(ErrorCode::kNonFinite,
                fmt::format("{}: produced a non-finite value", OpKindName(n.op)));
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::Leaf(Tensor value) {
  Node n;
  n.op = OpKind::kLeaf;
  n.value = std::move(value);
  return Push(std::move(n));
}

Var Tape::Leaf(std::span<const double> vector_values) {
  return Leaf(Tensor::Vector({vector_values.begin(), vector_values.end()}));
}

Var Tape::MatVec(Var m, Var v) {
  const Tensor& mt = value(m);
  const Tensor& vt = value(v);
  if (!vt.is_vector() || mt.cols() != vt.rows()) {
    ShapeError(OpKind::kMatVec,
               fmt::format("{} times {}", mt.ShapeString(), vt.ShapeString()));
  }
  Node n;
  n.op = OpKind::kMatVec;
  n.inputs = {m.id, v.id};
  n.value = Tensor::Vector(attnaudit::MatVec(mt, vt.values()));
  return Push(std::move(n));
}

Var Tape::MatMul(Var a, Var b) {
  const Tensor& at = value(a);
  const Tensor& bt = value(b);
  if (at.cols() != bt.rows()) {
    ShapeError(OpKind::kMatMul,
               fmt::format("{} times {}", at.ShapeString(), bt.ShapeString()));
  }
  Node n;
  n.op = OpKind::kMatMul;
  n.inputs = {a.id, b.id};
  n.value = Tensor(at.rows(), bt.cols());
  for (size_t i = 0; i < at.rows(); ++i) {
    for (size_t k = 0; k < at.cols(); ++k) {
      const double aik = at(i, k);
      for (size_t j = 0; j < bt.cols(); ++j) n.value(i, j) += aik * bt(k, j);
    }
  }
  return Push(std::move(n));
}

Var Tape::Add(Var a, Var b) {
  RequireSameShape(OpKind::kAdd, value(a), value(b));
  Node n;
  n.op = OpKind::kAdd;
  n.inputs = {a.id, b.id};
  n.value = value(a);
  AddInto(n.value, value(b));
  return Push(std::move(n));
}

Var Tape::Sub(Var a, Var b) {
  RequireSameShape(OpKind::kSub, value(a), value(b));
  Node n;
  n.op = OpKind::kSub;
  n.inputs = {a.id, b.id};
  n.value = value(a);
  const Tensor& bt = value(b);
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] -= bt[i];
  return Push(std::move(n));
}

Var Tape::Mul(Var a, Var b) {
  RequireSameShape(OpKind::kMul, value(a), value(b));
  Node n;
  n.op = OpKind::kMul;
  n.inputs = {a.id, b.id};
  n.value = value(a);
  const Tensor& bt = value(b);
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= bt[i];
  return Push(std::move(n));
}

Var Tape::Scale(Var a, double factor) {
  Node n;
  n.op = OpKind::kScale;
  n.inputs = {a.id};
  n.factor = factor;
  n.value = value(a);
  for (double& x : n.value.values()) x *= factor;
  return Push(std::move(n));
}

Var Tape::Tanh(Var a) {
  Node n;
  n.op = OpKind::kTanh;
  n.inputs = {a.id};
  n.value = value(a);
  for (double& x : n.value.values()) x = std::tanh(x);
  return Push(std::move(n));
}

Var Tape::Sigmoid(Var a) {
  Node n;
  n.op = OpKind::kSigmoid;
  n.inputs = {a.id};
  n.value = value(a);
  for (double& x : n.value.values()) x = 1.0 / (1.0 + std::exp(-x));
  return Push(std::move(n));
}

Var Tape::Concat(std::span<const Var> parts) {
  if (parts.empty()) ShapeError(OpKind::kConcat, "no inputs");
  std::vector<double> out;
  Node n;
  n.op = OpKind::kConcat;
  for (Var p : parts) {
    const Tensor& t = value(p);
    RequireVector(OpKind::kConcat, t, "every part");
    out.insert(out.end(), t.values().begin(), t.values().end());
    n.inputs.push_back(p.id);
  }
  n.value = Tensor::Vector(std::move(out));
  return Push(std::move(n));
}

Var Tape::Slice(Var v, size_t offset, size_t length) {
  const Tensor& t = value(v);
  RequireVector(OpKind::kSlice, t, "input");
  if (length == 0 || offset + length > t.rows()) {
    ShapeError(OpKind::kSlice, fmt::format("[{}, {}) of {}", offset,
                                           offset + length, t.ShapeString()));
  }
  Node n;
  n.op = OpKind::kSlice;
  n.inputs = {v.id};
  n.index = offset;
  n.value = Tensor::Vector(std::vector<double>(
      t.values().begin() + static_cast<std::ptrdiff_t>(offset),
      t.values().begin() + static_cast<std::ptrdiff_t>(offset + length)));
  return Push(std::move(n));
}

Var Tape::Dot(Var a, Var b) {
  const Tensor& at = value(a);
  const Tensor& bt = value(b);
  RequireVector(OpKind::kDot, at, "lhs");
  RequireSameShape(OpKind::kDot, at, bt);
  Node n;
  n.op = OpKind::kDot;
  n.inputs = {a.id, b.id};
  n.value = Tensor::Scalar(attnaudit::Dot(at.values(), bt.values()));
  return Push(std::move(n));
}

Var Tape::WeightedSum(Var weights, std::span<const Var> vectors) {
  const Tensor& w = value(weights);
  RequireVector(OpKind::kWeightedSum, w, "weights");
  if (w.rows() != vectors.size()) {
    ShapeError(OpKind::kWeightedSum,
               fmt::format("{} weights for {} vectors", w.rows(),
                           vectors.size()));
  }
  Node n;
  n.op = OpKind::kWeightedSum;
  n.inputs.push_back(weights.id);
  const Tensor& first = value(vectors[0]);
  RequireVector(OpKind::kWeightedSum, first, "vectors");
  n.value = Tensor(first.rows(), 1);
  // Same accumulation order as attnaudit::WeightedSum.
  for (size_t i = 0; i < vectors.size(); ++i) {
    const Tensor& vi = value(vectors[i]);
    RequireSameShape(OpKind::kWeightedSum, first, vi);
    for (size_t k = 0; k < vi.size(); ++k) n.value[k] += w[i] * vi[k];
    n.inputs.push_back(vectors[i].id);
  }
  return Push(std::move(n));
}

Var Tape::Softmax(Var v) {
  const Tensor& t = value(v);
  RequireVector(OpKind::kSoftmax, t, "input");
  Node n;
  n.op = OpKind::kSoftmax;
  n.inputs = {v.id};
  const ProbDist p = attnaudit::Softmax(t.values());
  n.value = Tensor::Vector({p.values().begin(), p.values().end()});
  return Push(std::move(n));
}

Var Tape::LogSoftmax(Var v) {
  const Tensor& t = value(v);
  RequireVector(OpKind::kLogSoftmax, t, "input");
  Node n;
  n.op = OpKind::kLogSoftmax;
  n.inputs = {v.id};
  n.value = Tensor::Vector(attnaudit::LogSoftmax(t.values()));
  return Push(std::move(n));
}

Var Tape::Log(Var a) {
  Node n;
  n.op = OpKind::kLog;
  n.inputs = {a.id};
  n.value = value(a);
  for (double& x : n.value.values()) x = std::log(x);
  return Push(std::move(n));
}

Var Tape::MaxSelect(Var v) {
  const Tensor& t = value(v);
  RequireVector(OpKind::kMaxSelect, t, "input");
  Node n;
  n.op = OpKind::kMaxSelect;
  n.inputs = {v.id};
  n.index = Argmax(t.values());
  n.value = Tensor::Scalar(t[n.index]);
  return Push(std::move(n));
}

Var Tape::DropoutMaskApply(Var v, Tensor mask) {
  RequireSameShape(OpKind::kDropout, value(v), mask);
  Node n;
  n.op = OpKind::kDropout;
  n.inputs = {v.id};
  n.value = value(v);
  for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= mask[i];
  n.aux = std::move(mask);
  return Push(std::move(n));
}

void Tape::BackwardNode(const Node& n, const Tensor& g,
                        std::vector<Tensor>& grads) const {
  const auto grad_of = [&](size_t input) -> Tensor& {
    Tensor& slot = grads[input];
    if (slot.empty()) {
      const Tensor& v = nodes_[input].value;
      slot = Tensor(v.rows(), v.cols());
    }
    return slot;
  };
  const auto in = [&](size_t k) -> const Tensor& {
    return nodes_[n.inputs[k]].value;
  };

  switch (n.op) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatVec: {
      const Tensor& m = in(0);
      const Tensor& v = in(1);
      Tensor& dm = grad_of(n.inputs[0]);
      for (size_t r = 0; r < m.rows(); ++r) {
        for (size_t c = 0; c < m.cols(); ++c) dm(r, c) += g[r] * v[c];
      }
      Tensor& dv = grad_of(n.inputs[1]);
      for (size_t r = 0; r < m.rows(); ++r) {
        for (size_t c = 0; c < m.cols(); ++c) dv[c] += m(r, c) * g[r];
      }
      break;
    }
    case OpKind::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t k = 0; k < a.cols(); ++k) {
          for (size_t j = 0; j < b.cols(); ++j) da(i, k) += g(i, j) * b(k, j);
        }
      }
      Tensor& db = grad_of(n.inputs[1]);
      for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t k = 0; k < a.cols(); ++k) {
          for (size_t j = 0; j < b.cols(); ++j) db(k, j) += a(i, k) * g(i, j);
        }
      }
      break;
    }
    case OpKind::kAdd:
      AddInto(grad_of(n.inputs[0]), g);
      AddInto(grad_of(n.inputs[1]), g);
      break;
    case OpKind::kSub: {
      AddInto(grad_of(n.inputs[0]), g);
      Tensor& db = grad_of(n.inputs[1]);
      for (size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      break;
    }
    case OpKind::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
      Tensor& db = grad_of(n.inputs[1]);
      for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
      break;
    }
    case OpKind::kScale: {
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) da[i] += n.factor * g[i];
      break;
    }
    case OpKind::kTanh: {
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      }
      break;
    }
    case OpKind::kSigmoid: {
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      }
      break;
    }
    case OpKind::kConcat: {
      size_t offset = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        Tensor& dk = grad_of(n.inputs[k]);
        for (size_t i = 0; i < dk.size(); ++i) dk[i] += g[offset + i];
        offset += dk.size();
      }
      break;
    }
    case OpKind::kSlice: {
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) da[n.index + i] += g[i];
      break;
    }
    case OpKind::kDot: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < a.size(); ++i) da[i] += g[0] * b[i];
      Tensor& db = grad_of(n.inputs[1]);
      for (size_t i = 0; i < b.size(); ++i) db[i] += g[0] * a[i];
      break;
    }
    case OpKind::kWeightedSum: {
      const Tensor& w = in(0);
      Tensor& dw = grad_of(n.inputs[0]);
      for (size_t i = 0; i + 1 < n.inputs.size(); ++i) {
        const Tensor& vi = in(i + 1);
        dw[i] += attnaudit::Dot(g.values(), vi.values());
        Tensor& dvi = grad_of(n.inputs[i + 1]);
        for (size_t k = 0; k < g.size(); ++k) dvi[k] += w[i] * g[k];
      }
      break;
    }
    case OpKind::kSoftmax: {
      const double gy = attnaudit::Dot(g.values(), n.value.values());
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) da[i] += n.value[i] * (g[i] - gy);
      break;
    }
    case OpKind::kLogSoftmax: {
      double g_total = 0.0;
      for (double x : g.values()) g_total += x;
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] - std::exp(n.value[i]) * g_total;
      }
      break;
    }
    case OpKind::kLog: {
      const Tensor& a = in(0);
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] / a[i];
      break;
    }
    case OpKind::kMaxSelect:
      grad_of(n.inputs[0])[n.index] += g[0];
      break;
    case OpKind::kDropout: {
      Tensor& da = grad_of(n.inputs[0]);
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.aux[i];
      break;
    }
  }
}

GradMap Tape::Backward(Var output) const {
  const Tensor& out = value(output);
  if (out.size() != 1) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("backward: output must be scalar, got {}",
                            out.ShapeString()));
  }
  GradMap result;
  result.grads_.resize(nodes_.size());
  result.shapes_.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    result.shapes_.emplace_back(n.value.rows(), n.value.cols());
  }
  result.grads_[output.id] = Tensor::Scalar(1.0);
  for (size_t id = output.id + 1; id-- > 0;) {
    if (result.grads_[id].empty()) continue;
    // Inputs always have smaller ids, so this slot is never written below.
    BackwardNode(nodes_[id], result.grads_[id], result.grads_);
  }
  return result;
}

double RelativeError(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

namespace {

GradCheckResult Compare(std::vector<double> analytic,
                        std::vector<double> numeric) {
  GradCheckResult result;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double err = RelativeError(analytic[i], numeric[i]);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  result.analytic = std::move(analytic);
  result.numeric = std::move(numeric);
  return result;
}

}  // namespace

GradCheckResult FiniteDiffCheck(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, std::span<const double> analytic, double eps) {
  if (!(eps > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "finite_diff_check: eps <= 0");
  }
  if (analytic.size() != x.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("finite_diff_check: {} gradient entries for {} "
                            "inputs",
                            analytic.size(), x.size()));
  }
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> numeric(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double plus = f(point);
    point[i] = saved - eps;
    const double minus = f(point);
    point[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw Error(ErrorCode::kNonFinite,
                  fmt::format("finite_diff_check: non-finite f near x[{}]", i));
    }
    numeric[i] = (plus - minus) / (2.0 * eps);
  }
  return Compare({analytic.begin(), analytic.end()}, std::move(numeric));
}

GradCheckResult FiniteDiffCheck(const TapeFunction& f,
                                std::span<const double> x, double eps) {
  Tape tape;
  const Var input = tape.Leaf(x);
  const Var out = f(tape, input);
  const GradMap grads = tape.Backward(out);
  const Tensor analytic = grads.Get(input);
  const auto eval = [&f](std::span<const double> point) {
    Tape t;
    const Var in = t.Leaf(point);
    return t.value(f(t, in))[0];
  };
  return FiniteDiffCheck(eval, x, analytic.values(), eps);
}

}  // namespace attnaudit
