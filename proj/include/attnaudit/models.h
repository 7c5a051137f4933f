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

#ifndef ATTNAUDIT_MODELS_H_
#define ATTNAUDIT_MODELS_H_

// Attention-based document classifiers: {FLAN, HAN} x {rnn, conv, noenc}.
//
// FLAN runs one encoder and one additive attention layer over all tokens of
// the document. HAN runs the encoder and attention over the words of each
// sentence, then a second encoder and attention over the sentence vectors.
// Either way the final attention layer's inputs h_i, weights alpha and the
// resulting logits are captured in a ForwardTrace, which the audit replays
// with modified weights without re-running the encoders.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnaudit/autodiff.h"
#include "attnaudit/numerics.h"
#include "attnaudit/text_data.h"

namespace attnaudit {

enum class Architecture { kFlan, kHan };
enum class EncoderKind { kRnn, kConv, kNoEnc };

const char* ArchitectureName(Architecture arch);
const char* EncoderKindName(EncoderKind kind);
Architecture ParseArchitecture(std::string_view name);
EncoderKind ParseEncoderKind(std::string_view name);
// e.g. "HANrnn".
std::string ModelName(Architecture arch, EncoderKind encoder);

struct ModelConfig {
  Architecture arch = Architecture::kFlan;
  EncoderKind encoder = EncoderKind::kNoEnc;
  // Including the pad and unk ids.
  uint32_t vocab_size = 2;
  uint32_t embed_dim = 16;
  // GRU hidden size per direction, or filters per convolution bank. Encoded
  // vectors have 2 * enc_hidden_dim entries for rnn and conv.
  uint32_t enc_hidden_dim = 16;
  uint32_t att_dim = 16;
  uint32_t num_classes = 2;
  // Before the word-level encoder of a HAN.
  double dropout_pre_sentence_encoder = 0.0;
  // Before the document-level encoder (HAN sentence level, or the only
  // encoder of a FLAN).
  double dropout_pre_document_encoder = 0.0;
  double dropout_classifier = 0.0;
  uint64_t seed = 1;

  // Throws kConfig when dims are zero or a dropout is outside [0, 1).
  void Validate() const;
  uint32_t EncodedDim(uint32_t input_dim) const;
};

template <typename T>
struct AttentionParamsT {
  T w;        // att_dim x enc_dim
  T b;        // att_dim
  T context;  // att_dim
};

template <typename T>
struct GruParamsT {
  T w_z, u_z, b_z;
  T w_r, u_r, b_r;
  T w_h, u_h, b_h;
};

// Only the members for the configured EncoderKind are populated.
template <typename T>
struct EncoderParamsT {
  GruParamsT<T> forward;
  GruParamsT<T> backward;
  T conv5_w, conv5_b;  // filters x (5 * in_dim), filters
  T conv3_w, conv3_b;  // filters x (3 * in_dim), filters
};

template <typename T>
struct LevelParamsT {
  EncoderParamsT<T> encoder;
  AttentionParamsT<T> attention;
};

template <typename T>
struct ModelParamsT {
  T embedding;  // vocab_size x embed_dim
  LevelParamsT<T> word;
  // HAN only.
  LevelParamsT<T> sentence;
  T classifier_w;  // num_classes x doc_dim
  T classifier_b;  // num_classes
};

using AttentionParams = AttentionParamsT<Tensor>;
using EncoderParams = EncoderParamsT<Tensor>;
using ModelParams = ModelParamsT<Tensor>;

namespace internal {

template <typename F, typename... P>
void VisitGru(const std::string& prefix, F& f, P&... p) {
  f(prefix + "w_z", p.w_z...);
  f(prefix + "u_z", p.u_z...);
  f(prefix + "b_z", p.b_z...);
  f(prefix + "w_r", p.w_r...);
  f(prefix + "u_r", p.u_r...);
  f(prefix + "b_r", p.b_r...);
  f(prefix + "w_h", p.w_h...);
  f(prefix + "u_h", p.u_h...);
  f(prefix + "b_h", p.b_h...);
}

template <typename F, typename... P>
void VisitLevel(const std::string& prefix, EncoderKind kind, F& f, P&... p) {
  switch (kind) {
    case EncoderKind::kRnn:
      VisitGru(prefix + "encoder.forward.", f, p.encoder.forward...);
      VisitGru(prefix + "encoder.backward.", f, p.encoder.backward...);
      break;
    case EncoderKind::kConv:
      f(prefix + "encoder.conv5_w", p.encoder.conv5_w...);
      f(prefix + "encoder.conv5_b", p.encoder.conv5_b...);
      f(prefix + "encoder.conv3_w", p.encoder.conv3_w...);
      f(prefix + "encoder.conv3_b", p.encoder.conv3_b...);
      break;
    case EncoderKind::kNoEnc:
      break;
  }
  f(prefix + "attention.w", p.attention.w...);
  f(prefix + "attention.b", p.attention.b...);
  f(prefix + "attention.context", p.attention.context...);
}

}  // namespace internal

// Calls f(name, member...) for every parameter tensor the configuration
// uses, in a fixed order, across any number of parallel ModelParamsT
// instances (e.g. parameters and their gradients).
template <typename F, typename... P>
void VisitParams(const ModelConfig& config, F&& f, P&... p) {
  f(std::string("embedding"), p.embedding...);
  internal::VisitLevel("word.", config.encoder, f, p.word...);
  if (config.arch == Architecture::kHan) {
    internal::VisitLevel("sentence.", config.encoder, f, p.sentence...);
  }
  f(std::string("classifier.w"), p.classifier_w...);
  f(std::string("classifier.b"), p.classifier_b...);
}

struct ParamSpec {
  std::string name;
  size_t rows = 0;
  size_t cols = 0;
  // Biases and context vectors; serialized as flat arrays.
  bool is_vector = false;
};

// Expected parameter shapes in VisitParams order.
std::vector<ParamSpec> ParamSpecs(const ModelConfig& config);

struct Model {
  ModelConfig config;
  ModelParams params;
};

// Uniform(-0.1, 0.1) from config.seed in VisitParams order; classifier bias
// zero.
Model InitModel(const ModelConfig& config);
// Same structure with every tensor zeroed.
ModelParams ZerosLike(const Model& model);
size_t NumParameters(const Model& model);
// Flattens / restores every parameter in VisitParams order.
std::vector<double> FlattenParams(const ModelConfig& config,
                                  const ModelParams& params);
void UnflattenParams(const ModelConfig& config, std::span<const double> flat,
                     ModelParams& params);

enum class Mode { kTrain, kEval };

struct ForwardTrace {
  // Inputs to the final attention layer.
  std::vector<std::vector<double>> final_inputs;
  // tanh(W h_i + b) of the final attention layer.
  std::vector<std::vector<double>> att_hidden;
  ProbDist alpha;
  std::vector<double> doc_vector;
  std::vector<double> logits;
  ProbDist output;
  size_t predicted = 0;
  size_t final_seq_len = 0;
};

struct ForwardOptions {
  Mode mode = Mode::kEval;
  // Source of dropout masks in train mode; required when any dropout > 0.
  Rng* rng = nullptr;
  // Replaces the final attention weights before the weighted sum.
  std::function<std::vector<double>(const ProbDist&)> final_alpha_override;
};

ForwardTrace ForwardFlan(const Model& model, const Document& doc,
                         const ForwardOptions& options = {});
ForwardTrace ForwardHan(const Model& model, const Document& doc,
                        const ForwardOptions& options = {});
// Dispatches on model.config.arch.
ForwardTrace Forward(const Model& model, const Document& doc,
                     const ForwardOptions& options = {});

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grads;
};

// Cross-entropy -log p[doc.label] and its gradient w.r.t. every parameter.
LossAndGrad ComputeLossAndGrad(const Model& model, const Document& doc,
                               const ForwardOptions& options = {});

// Single additive attention layer, evaluated directly.
struct AttentionResult {
  std::vector<std::vector<double>> hidden;
  ProbDist alpha;
  std::vector<double> context_out;
};
AttentionResult AttentionForward(const AttentionParams& params,
                                 std::span<const std::vector<double>> h);

// One encoder over a sequence, evaluated on a private tape.
std::vector<std::vector<double>> Encode(
    EncoderKind kind, const EncoderParams& params,
    std::span<const std::vector<double>> inputs);

// Classifier logits for an arbitrary (not necessarily normalized) weighting
// of the trace's final inputs. The encoders are not re-run.
std::vector<double> LogitsFromWeights(const Model& model,
                                      const ForwardTrace& trace,
                                      std::span<const double> weights);
// Output distribution after replacing alpha. Throws kShapeMismatch on length
// mismatch.
ProbDist OutputFromAlpha(const Model& model, const ForwardTrace& trace,
                         const ProbDist& alpha_mod);
// Output when the attention layer's output is replaced by the zero vector:
// softmax(classifier bias).
ProbDist OutputFromZeroVector(const Model& model);

// d(x) = exp(max_i x_i) / sum_i exp(x_i), computed with a max shift.
double DecisionConfidence(std::span<const double> logits);

// d(d(x)) / d(alpha_i) with alpha treated as free variables feeding the
// weighted sum, differentiated on a tape over attention -> classifier only.
std::vector<double> GradDecisionWrtAlpha(const Model& model,
                                         const ForwardTrace& trace);

// Versioned JSON: {"format_version":1,"config":{...},"tensors":{name: array}}
// with every float written using 17 significant digits.
inline constexpr int kModelFormatVersion = 1;
void SaveModel(const Model& model, const std::filesystem::path& path);
std::string SerializeModel(const Model& model);
// Throws kMalformedFile, kVersionMismatch or kShapeMismatch.
Model LoadModel(const std::filesystem::path& path);
Model ParseModel(std::string_view text);

}  // namespace attnaudit

#endif  // ATTNAUDIT_MODELS_H_
