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

#ifndef ATTNAUDIT_NUMERICS_H_
#define ATTNAUDIT_NUMERICS_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace attnaudit {

// Dense row-major 64-bit tensor of rank <= 2. Column vectors are (n, 1) and
// scalars are (1, 1).
class Tensor {
 public:
  Tensor() = default;
  Tensor(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Tensor Vector(std::vector<double> values);
  static Tensor Matrix(size_t rows, size_t cols, std::vector<double> values);
  static Tensor Scalar(double value) { return Tensor(1, 1, value); }

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_vector() const { return cols_ == 1; }
  bool SameShape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::span<const double> row(size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool AllFinite() const;
  std::string ShapeString() const;

  bool operator==(const Tensor& other) const = default;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

// A categorical distribution: non-negative, finite entries summing to 1
// within kProbDistTolerance.
class ProbDist {
 public:
  static constexpr double kProbDistTolerance = 1e-9;

  ProbDist() = default;

  // Throws kInvalidArgument ("not-a-distribution") if the invariant fails.
  static ProbDist FromValues(std::vector<double> values);
  static ProbDist Uniform(size_t n);

  size_t size() const { return values_.size(); }
  double operator[](size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }

  bool operator==(const ProbDist& other) const = default;

 private:
  explicit ProbDist(std::vector<double> values) : values_(std::move(values)) {}
  std::vector<double> values_;
};

// Numerically stable softmax (max-shifted). Throws "empty-vector".
ProbDist Softmax(std::span<const double> v);

// log(softmax(v)) computed via log-sum-exp.
std::vector<double> LogSoftmax(std::span<const double> v);

// Jensen-Shannon divergence with natural logarithm. The result is clamped to
// [0, ln 2] and is bit-identical when the arguments are swapped.
double JsDivergence(const ProbDist& p, const ProbDist& q);

// Zeroes the given indices and rescales the survivors to sum to one.
// Throws "all-zeroed" when no index survives and "mass-underflow" when the
// surviving mass is below 1e-300.
ProbDist RenormalizeZeroed(const ProbDist& alpha,
                           std::span<const size_t> zero_set);

// Index of the maximal entry; ties resolve to the lowest index.
size_t Argmax(std::span<const double> v);

// out = m * v.
std::vector<double> MatVec(const Tensor& m, std::span<const double> v);

// out = sum_i weights[i] * vectors[i], accumulated in index order.
std::vector<double> WeightedSum(std::span<const double> weights,
                                std::span<const std::vector<double>> vectors);

double Dot(std::span<const double> a, std::span<const double> b);

// Five-number summary for box plots. Quartiles use inclusive linear
// interpolation (position (n - 1) * q on the sorted samples); whiskers are the
// most extreme samples within 1.5 IQR of the nearer quartile.
struct BoxStats {
  double min_whisker = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max_whisker = 0.0;
  size_t outlier_count = 0;
};

BoxStats ComputeBoxStats(std::span<const double> samples);

// Inclusive linear-interpolation quantile of already sorted samples.
double SortedQuantile(std::span<const double> sorted, double q);

struct HistogramBin {
  double lo = 0.0;
  size_t count = 0;
};

struct Histogram {
  double width = 0.0;
  std::vector<HistogramBin> bins;
  // Values outside [lo, hi).
  size_t overflow = 0;
};

// Half-open bins [b, b + width) covering [lo, hi).
Histogram ComputeHistogram(std::span<const double> values, double lo,
                           double hi, double width);

// splitmix64 step: advances `state` and returns the mixed output.
uint64_t SplitMix64(uint64_t& state);

// Order-sensitive 64-bit mix of two words, used for per-instance seeding.
uint64_t MixSeeds(uint64_t a, uint64_t b);

// xoshiro256** seeded from a single word through splitmix64. The stream is
// fully specified here, so a seed reproduces identically on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t NextU64();
  // Uniform in [0, 1) with 53 random bits.
  double NextUniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * NextUniform(); }
  // Uniform integer in [0, n) by rejection sampling. n must be > 0.
  uint64_t NextBelow(uint64_t n);
  bool Bernoulli(double p) { return NextUniform() < p; }

  // Fisher-Yates: for i = n-1 .. 1, swap(i, NextBelow(i + 1)).
  std::vector<size_t> Permutation(size_t n);
  template <typename T>
  void Shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(NextBelow(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<uint64_t, 4> s_;
};

}  // namespace attnaudit

#endif  // ATTNAUDIT_NUMERICS_H_
