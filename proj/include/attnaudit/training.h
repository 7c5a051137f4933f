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

#ifndef ATTNAUDIT_TRAINING_H_
#define ATTNAUDIT_TRAINING_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "attnaudit/models.h"
#include "attnaudit/numerics.h"
#include "attnaudit/text_data.h"

namespace attnaudit {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  // Seeds the per-epoch document order and the dropout masks.
  uint64_t seed = 1;
  uint32_t max_epochs = 20;
  uint32_t patience = 5;
  double clip_norm = 10.0;

  // Throws kConfig.
  void Validate() const;
};

enum class StopReason { kPatience, kMaxEpochs };
const char* StopReasonName(StopReason reason);

struct TrainReport {
  // Mean per-document cross-entropy of each completed epoch.
  std::vector<double> train_loss;
  std::vector<double> dev_accuracy;
  // 1-based epoch whose parameters were kept.
  uint32_t best_epoch = 0;
  StopReason stopped_reason = StopReason::kMaxEpochs;

  bool operator==(const TrainReport&) const = default;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  uint64_t step = 0;
};

AdamState InitAdamState(std::span<Tensor* const> params);

// One bias-corrected Adam update; increments state.step. Throws kNonFinite on
// a non-finite gradient.
void AdamStep(std::span<Tensor* const> params,
              std::span<const Tensor* const> grads, AdamState& state,
              const AdamConfig& config);

// Global L2 clipping: rescales all gradients by max_norm / norm when the
// joint norm exceeds max_norm. Returns the norm before clipping.
double ClipGlobalNorm(std::span<Tensor* const> grads, double max_norm);

// Pointers to every parameter tensor in VisitParams order.
std::vector<Tensor*> ParamPointers(const ModelConfig& config,
                                   ModelParams& params);

double EvaluateAccuracy(const Model& model, std::span<const Document> corpus);

struct TrainResult {
  Model model;
  TrainReport report;
};

using EpochCallback =
    std::function<void(uint32_t epoch, double train_loss, double dev_accuracy)>;

// Batch size one: per epoch the training documents are visited in an order
// shuffled from cfg.seed, each contributing one clipped Adam step. After every
// epoch dev accuracy is measured in eval mode; training stops after
// cfg.patience epochs without a strict improvement and the best epoch's
// parameters are returned. Throws kDivergence on a non-finite loss.
TrainResult Train(const Model& init, std::span<const Document> train,
                  std::span<const Document> dev, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = nullptr);

}  // namespace attnaudit

#endif  // ATTNAUDIT_TRAINING_H_
