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

#include "attnaudit/numerics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "attnaudit/error.h"
#include "fmt/format.h"

namespace attnaudit {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid-argument";
    case ErrorCode::kShapeMismatch:
      return "shape-mismatch";
    case ErrorCode::kNonFinite:
      return "non-finite";
    case ErrorCode::kConfig:
      return "config";
    case ErrorCode::kData:
      return "data";
    case ErrorCode::kIo:
      return "io";
    case ErrorCode::kMalformedFile:
      return "malformed-file";
    case ErrorCode::kVersionMismatch:
      return "version-mismatch";
    case ErrorCode::kDivergence:
      return "divergence";
    case ErrorCode::kOracleCap:
      return "oracle-cap";
    case ErrorCode::kNothingIncluded:
      return "nothing-included";
  }
  return "unknown";
}

Tensor Tensor::Vector(std::vector<double> values) {
  Tensor t;
  t.rows_ = values.size();
  t.cols_ = 1;
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::Matrix(size_t rows, size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("matrix: {} values for shape {}x{}", values.size(),
                            rows, cols));
  }
  Tensor t;
  t.rows_ = rows;
  t.cols_ = cols;
  t.data_ = std::move(values);
  return t;
}

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double x) { return std::isfinite(x); });
}

std::string Tensor::ShapeString() const {
  return fmt::format("{}x{}", rows_, cols_);
}

ProbDist ProbDist::FromValues(std::vector<double> values) {
  if (values.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "not-a-distribution: empty");
  }
  double total = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("not-a-distribution: entry {}", v));
    }
    total += v;
  }
  if (std::abs(total - 1.0) > kProbDistTolerance) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("not-a-distribution: sums to {:.17g}", total));
  }
  return ProbDist(std::move(values));
}

ProbDist ProbDist::Uniform(size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "empty-vector");
  return ProbDist(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

ProbDist Softmax(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::kInvalidArgument, "empty-vector");
  const double max_value = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - max_value);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return ProbDist::FromValues(std::move(out));
}

std::vector<double> LogSoftmax(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::kInvalidArgument, "empty-vector");
  const double max_value = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += std::exp(x - max_value);
  const double log_z = max_value + std::log(total);
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] - log_z;
  return out;
}

namespace {

// KL(p || m) with 0 * log(0 / .) = 0.
double KlToMixture(std::span<const double> p, std::span<const double> m) {
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / m[i]);
  }
  return total;
}

}  // namespace

double JsDivergence(const ProbDist& p, const ProbDist& q) {
  if (p.size() != q.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("js_divergence: lengths {} and {}", p.size(),
                            q.size()));
  }
  std::vector<double> m(p.size());
  for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  // Addition is commutative in IEEE arithmetic, so swapping p and q yields
  // the same bits.
  const double js =
      0.5 * KlToMixture(p.values(), m) + 0.5 * KlToMixture(q.values(), m);
  return std::clamp(js, 0.0, std::numbers::ln2);
}

ProbDist RenormalizeZeroed(const ProbDist& alpha,
                           std::span<const size_t> zero_set) {
  std::vector<char> zeroed(alpha.size(), 0);
  for (size_t index : zero_set) {
    if (index >= alpha.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("renormalize_zeroed: index {} out of range {}",
                              index, alpha.size()));
    }
    zeroed[index] = 1;
  }
  if (std::all_of(zeroed.begin(), zeroed.end(), [](char z) { return z; })) {
    throw Error(ErrorCode::kInvalidArgument, "all-zeroed");
  }
  double surviving = 0.0;
  for (size_t i = 0; i < alpha.size(); ++i) {
    if (!zeroed[i]) surviving += alpha[i];
  }
  if (surviving < 1e-300) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("mass-underflow: surviving mass {}", surviving));
  }
  std::vector<double> out(alpha.size(), 0.0);
  for (size_t i = 0; i < alpha.size(); ++i) {
    if (!zeroed[i]) out[i] = alpha[i] / surviving;
  }
  return ProbDist::FromValues(std::move(out));
}

size_t Argmax(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::kInvalidArgument, "empty-vector");
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<double> MatVec(const Tensor& m, std::span<const double> v) {
  if (m.cols() != v.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("matvec: matrix {} with vector of {}",
                            m.ShapeString(), v.size()));
  }
  std::vector<double> out(m.rows(), 0.0);
  for (size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double acc = 0.0;
    for (size_t c = 0; c < row.size(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

std::vector<double> WeightedSum(std::span<const double> weights,
                                std::span<const std::vector<double>> vectors) {
  if (weights.size() != vectors.size() || vectors.empty()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("weighted_sum: {} weights for {} vectors",
                            weights.size(), vectors.size()));
  }
  std::vector<double> out(vectors[0].size(), 0.0);
  for (size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != out.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("weighted_sum: vector {} has length {}, expected "
                              "{}",
                              i, vectors[i].size(), out.size()));
    }
    for (size_t k = 0; k < out.size(); ++k) out[k] += weights[i] * vectors[i][k];
  }
  return out;
}

double Dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("dot: lengths {} and {}", a.size(), b.size()));
  }
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double SortedQuantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::kInvalidArgument, "empty-vector");
  const double position = q * static_cast<double>(sorted.size() - 1);
  const size_t lower = static_cast<size_t>(std::floor(position));
  const size_t upper = std::min(lower + 1, sorted.size() - 1);
  const double frac = position - static_cast<double>(lower);
  return sorted[lower] + frac * (sorted[upper] - sorted[lower]);
}

BoxStats ComputeBoxStats(std::span<const double> samples) {
  if (samples.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "box_stats: empty-vector");
  }
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  BoxStats stats;
  stats.q1 = SortedQuantile(sorted, 0.25);
  stats.median = SortedQuantile(sorted, 0.5);
  stats.q3 = SortedQuantile(sorted, 0.75);
  const double iqr = stats.q3 - stats.q1;
  const double lo_fence = stats.q1 - 1.5 * iqr;
  const double hi_fence = stats.q3 + 1.5 * iqr;
  stats.min_whisker = stats.q1;
  stats.max_whisker = stats.q3;
  for (double x : sorted) {
    if (x < lo_fence || x > hi_fence) {
      ++stats.outlier_count;
      continue;
    }
    stats.min_whisker = std::min(stats.min_whisker, x);
    stats.max_whisker = std::max(stats.max_whisker, x);
  }
  return stats;
}

Histogram ComputeHistogram(std::span<const double> values, double lo,
                           double hi, double width) {
  if (!(width > 0.0) || !(lo < hi) || !std::isfinite(lo) ||
      !std::isfinite(hi)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("histogram: bad range [{}, {}) width {}", lo, hi,
                            width));
  }
  const size_t num_bins =
      static_cast<size_t>(std::ceil((hi - lo) / width - 1e-9));
  Histogram hist;
  hist.width = width;
  hist.bins.resize(num_bins);
  for (size_t b = 0; b < num_bins; ++b) {
    hist.bins[b].lo = lo + static_cast<double>(b) * width;
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFinite,
                  fmt::format("histogram: non-finite value {}", v));
    }
    if (v < lo || v >= hi) {
      ++hist.overflow;
      continue;
    }
    size_t b = static_cast<size_t>(std::floor((v - lo) / width));
    hist.bins[std::min(b, num_bins - 1)].count++;
  }
  return hist;
}

uint64_t SplitMix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t MixSeeds(uint64_t a, uint64_t b) {
  uint64_t state = a;
  const uint64_t first = SplitMix64(state);
  state = first ^ b;
  return SplitMix64(state);
}

Rng::Rng(uint64_t seed) {
  uint64_t state = seed;
  for (auto& word : s_) word = SplitMix64(state);
}

uint64_t Rng::NextU64() {
  const auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::NextUniform() {
  return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
}

uint64_t Rng::NextBelow(uint64_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "NextBelow(0)");
  // Reject the top partial block so every residue is equally likely.
  const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                         std::numeric_limits<uint64_t>::max() % n;
  uint64_t x;
  do {
    x = NextU64();
  } while (x >= limit);
  return x % n;
}

std::vector<size_t> Rng::Permutation(size_t n) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Shuffle(order);
  return order;
}

}  // namespace attnaudit
