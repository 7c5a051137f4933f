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

#include "attnaudit/training.h"

#include <cmath>

#include "attnaudit/error.h"
#include "fmt/format.h"

namespace attnaudit {

void TrainConfig::Validate() const {
  if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate)) {
    throw Error(ErrorCode::kConfig, "train: learning_rate must be >= 0");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw Error(ErrorCode::kConfig, "train: invalid Adam constants");
  }
  if (patience < 1) throw Error(ErrorCode::kConfig, "train: patience must be >= 1");
  if (max_epochs < 1) {
    throw Error(ErrorCode::kConfig, "train: max_epochs must be >= 1");
  }
  if (!(clip_norm > 0.0)) {
    throw Error(ErrorCode::kConfig, "train: clip_norm must be > 0");
  }
}

const char* StopReasonName(StopReason reason) {
  return reason == StopReason::kPatience ? "patience" : "max_epochs";
}

AdamState InitAdamState(std::span<Tensor* const> params) {
  AdamState state;
  for (const Tensor* p : params) {
    state.m.emplace_back(p->rows(), p->cols());
    state.v.emplace_back(p->rows(), p->cols());
  }
  return state;
}

void AdamStep(std::span<Tensor* const> params,
              std::span<const Tensor* const> grads, AdamState& state,
              const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("adam: {} params, {} grads, {} moment slots",
                            params.size(), grads.size(), state.m.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->SameShape(*grads[i]) || !params[i]->SameShape(state.m[i])) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("adam: tensor {} shape {} vs grad {}", i,
                              params[i]->ShapeString(),
                              grads[i]->ShapeString()));
    }
    if (!grads[i]->AllFinite()) {
      throw Error(ErrorCode::kNonFinite,
                  fmt::format("adam: non-finite gradient in tensor {}", i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

double ClipGlobalNorm(std::span<Tensor* const> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor* g : grads) {
    for (double x : g->values()) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor* g : grads) {
      for (double& x : g->values()) x *= scale;
    }
  }
  return norm;
}

std::vector<Tensor*> ParamPointers(const ModelConfig& config,
                                   ModelParams& params) {
  std::vector<Tensor*> out;
  VisitParams(
      config, [&](const std::string&, Tensor& t) { out.push_back(&t); },
      params);
  return out;
}

double EvaluateAccuracy(const Model& model, std::span<const Document> corpus) {
  if (corpus.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "evaluate_accuracy: empty corpus");
  }
  size_t correct = 0;
  for (const Document& doc : corpus) {
    if (Forward(model, doc).predicted == doc.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(corpus.size());
}

TrainResult Train(const Model& init, std::span<const Document> train,
                  std::span<const Document> dev, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.Validate();
  if (train.empty() || dev.empty()) {
    throw Error(ErrorCode::kData, "train: empty train or dev split");
  }
  Model model = init;
  Model best = init;
  std::vector<Tensor*> params = ParamPointers(model.config, model.params);
  AdamState adam = InitAdamState(params);
  Rng rng(cfg.seed);
  ForwardOptions options;
  options.mode = Mode::kTrain;
  options.rng = &rng;

  TrainReport report;
  double best_accuracy = -1.0;
  uint32_t since_improvement = 0;
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (uint32_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.Shuffle(order);
    double loss_sum = 0.0;
    for (size_t index : order) {
      const Document& doc = train[index];
      LossAndGrad step;
      try {
        step = ComputeLossAndGrad(model, doc, options);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kDivergence,
                    fmt::format("divergence: epoch {} doc_id {}: {}", epoch,
                                doc.doc_id, e.what()));
      }
      if (!std::isfinite(step.loss)) {
        throw Error(ErrorCode::kDivergence,
                    fmt::format("divergence: epoch {} doc_id {}: loss {}",
                                epoch, doc.doc_id, step.loss));
      }
      loss_sum += step.loss;
      std::vector<Tensor*> grads = ParamPointers(model.config, step.grads);
      ClipGlobalNorm(grads, cfg.clip_norm);
      try {
        AdamStep(params, std::vector<const Tensor*>(grads.begin(), grads.end()),
                 adam, cfg.adam);
      } catch (const Error& e) {
        throw Error(ErrorCode::kDivergence,
                    fmt::format("divergence: epoch {} doc_id {}: {}", epoch,
                                doc.doc_id, e.what()));
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(train.size());
    const double accuracy = EvaluateAccuracy(model, dev);
    report.train_loss.push_back(mean_loss);
    report.dev_accuracy.push_back(accuracy);
    if (on_epoch) on_epoch(epoch, mean_loss, accuracy);

    if (accuracy > best_accuracy) {
      best_accuracy = accuracy;
      best = model;
      report.best_epoch = epoch;
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience) {
      report.stopped_reason = StopReason::kPatience;
      return {std::move(best), std::move(report)};
    }
  }
  report.stopped_reason = StopReason::kMaxEpochs;
  return {std::move(best), std::move(report)};
}

}  // namespace attnaudit
