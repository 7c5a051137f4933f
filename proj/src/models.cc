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

#include "attnaudit/models.h"

#include <cmath>
#include <map>

#include "attnaudit/error.h"
#include "fmt/format.h"

namespace attnaudit {

const char* ArchitectureName(Architecture arch) {
  return arch == Architecture::kFlan ? "FLAN" : "HAN";
}

const char* EncoderKindName(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kRnn:
      return "rnn";
    case EncoderKind::kConv:
      return "conv";
    case EncoderKind::kNoEnc:
      return "noenc";
  }
  return "unknown";
}

Architecture ParseArchitecture(std::string_view name) {
  if (name == "FLAN" || name == "flan") return Architecture::kFlan;
  if (name == "HAN" || name == "han") return Architecture::kHan;
  throw Error(ErrorCode::kConfig, fmt::format("unknown architecture '{}'", name));
}

EncoderKind ParseEncoderKind(std::string_view name) {
  if (name == "rnn") return EncoderKind::kRnn;
  if (name == "conv") return EncoderKind::kConv;
  if (name == "noenc") return EncoderKind::kNoEnc;
  throw Error(ErrorCode::kConfig, fmt::format("unknown encoder '{}'", name));
}

std::string ModelName(Architecture arch, EncoderKind encoder) {
  return fmt::format("{}{}", ArchitectureName(arch), EncoderKindName(encoder));
}

void ModelConfig::Validate() const {
  if (vocab_size == 0 || embed_dim == 0 || enc_hidden_dim == 0 ||
      att_dim == 0 || num_classes == 0) {
    throw Error(ErrorCode::kConfig, "model: every dimension must be > 0");
  }
  for (double p : {dropout_pre_sentence_encoder, dropout_pre_document_encoder,
                   dropout_classifier}) {
    if (!(p >= 0.0 && p < 1.0)) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("model: dropout {} outside [0, 1)", p));
    }
  }
}

uint32_t ModelConfig::EncodedDim(uint32_t input_dim) const {
  return encoder == EncoderKind::kNoEnc ? input_dim : 2 * enc_hidden_dim;
}

namespace {

void AddLevelSpecs(const ModelConfig& config, const std::string& prefix,
                   size_t in_dim, std::vector<ParamSpec>& specs) {
  const size_t hidden = config.enc_hidden_dim;
  const auto add = [&](const std::string& name, size_t rows, size_t cols) {
    specs.push_back({prefix + name, rows, cols, false});
  };
  const auto add_vec = [&](const std::string& name, size_t rows) {
    specs.push_back({prefix + name, rows, 1, true});
  };
  switch (config.encoder) {
    case EncoderKind::kRnn:
      for (const char* dir : {"encoder.forward.", "encoder.backward."}) {
        for (const char* gate : {"z", "r", "h"}) {
          add(fmt::format("{}w_{}", dir, gate), hidden, in_dim);
          add(fmt::format("{}u_{}", dir, gate), hidden, hidden);
          add_vec(fmt::format("{}b_{}", dir, gate), hidden);
        }
      }
      break;
    case EncoderKind::kConv:
      add("encoder.conv5_w", hidden, 5 * in_dim);
      add_vec("encoder.conv5_b", hidden);
      add("encoder.conv3_w", hidden, 3 * in_dim);
      add_vec("encoder.conv3_b", hidden);
      break;
    case EncoderKind::kNoEnc:
      break;
  }
  const size_t enc_dim = config.EncodedDim(static_cast<uint32_t>(in_dim));
  add("attention.w", config.att_dim, enc_dim);
  add_vec("attention.b", config.att_dim);
  add_vec("attention.context", config.att_dim);
}

size_t DocDim(const ModelConfig& config) {
  uint32_t dim = config.EncodedDim(config.embed_dim);
  if (config.arch == Architecture::kHan) dim = config.EncodedDim(dim);
  return dim;
}

ModelParams AllocateParams(const ModelConfig& config) {
  const std::vector<ParamSpec> specs = ParamSpecs(config);
  ModelParams params;
  size_t next = 0;
  VisitParams(
      config,
      [&](const std::string& name, Tensor& t) {
        const ParamSpec& spec = specs.at(next++);
        if (spec.name != name) {
          throw Error(ErrorCode::kInvalidArgument,
                      fmt::format("parameter order mismatch: {} vs {}",
                                  spec.name, name));
        }
        t = Tensor(spec.rows, spec.cols);
      },
      params);
  return params;
}

}  // namespace

std::vector<ParamSpec> ParamSpecs(const ModelConfig& config) {
  std::vector<ParamSpec> specs;
  specs.push_back({"embedding", config.vocab_size, config.embed_dim, false});
  AddLevelSpecs(config, "word.", config.embed_dim, specs);
  if (config.arch == Architecture::kHan) {
    AddLevelSpecs(config, "sentence.", config.EncodedDim(config.embed_dim),
                  specs);
  }
  specs.push_back({"classifier.w", config.num_classes, DocDim(config), false});
  specs.push_back({"classifier.b", config.num_classes, 1, true});
  return specs;
}

Model InitModel(const ModelConfig& config) {
  config.Validate();
  Model model{config, AllocateParams(config)};
  Rng rng(config.seed);
  VisitParams(
      config,
      [&](const std::string& name, Tensor& t) {
        if (name == "classifier.b") return;
        for (double& x : t.values()) x = rng.Uniform(-0.1, 0.1);
      },
      model.params);
  return model;
}

ModelParams ZerosLike(const Model& model) {
  return AllocateParams(model.config);
}

size_t NumParameters(const Model& model) {
  size_t total = 0;
  VisitParams(
      model.config,
      [&](const std::string&, const Tensor& t) { total += t.size(); },
      model.params);
  return total;
}

std::vector<double> FlattenParams(const ModelConfig& config,
                                  const ModelParams& params) {
  std::vector<double> flat;
  VisitParams(
      config,
      [&](const std::string&, const Tensor& t) {
        flat.insert(flat.end(), t.values().begin(), t.values().end());
      },
      params);
  return flat;
}

void UnflattenParams(const ModelConfig& config, std::span<const double> flat,
                     ModelParams& params) {
  size_t offset = 0;
  VisitParams(
      config,
      [&](const std::string& name, Tensor& t) {
        if (offset + t.size() > flat.size()) {
          throw Error(ErrorCode::kShapeMismatch,
                      fmt::format("unflatten: ran out of values at {}", name));
        }
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                  flat.begin() + static_cast<std::ptrdiff_t>(offset + t.size()),
                  t.values().begin());
        offset += t.size();
      },
      params);
  if (offset != flat.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("unflatten: {} values for {} parameters",
                            flat.size(), offset));
  }
}

namespace {

using ModelVars = ModelParamsT<Var>;
using LevelVars = LevelParamsT<Var>;
using EncoderVars = EncoderParamsT<Var>;
using AttentionVars = AttentionParamsT<Var>;
using GruVars = GruParamsT<Var>;

// Shared constant leaves (zero padding, GRU initial state, ones).
class Constants {
 public:
  explicit Constants(Tape& tape) : tape_(tape) {}

  Var Zeros(size_t n) { return Get(zeros_, n, 0.0); }
  Var Ones(size_t n) { return Get(ones_, n, 1.0); }

 private:
  Var Get(std::map<size_t, Var>& cache, size_t n, double fill) {
    auto it = cache.find(n);
    if (it == cache.end()) {
      it = cache.emplace(n, tape_.Leaf(Tensor(n, 1, fill))).first;
    }
    return it->second;
  }

  Tape& tape_;
  std::map<size_t, Var> zeros_;
  std::map<size_t, Var> ones_;
};

Var GruStep(Tape& tape, Constants& constants, const GruVars& g, Var x, Var h) {
  const auto gate = [&](Var w, Var u, Var b, Var state) {
    return tape.Add(tape.Add(tape.MatVec(w, x), tape.MatVec(u, state)), b);
  };
  const Var z = tape.Sigmoid(gate(g.w_z, g.u_z, g.b_z, h));
  const Var r = tape.Sigmoid(gate(g.w_r, g.u_r, g.b_r, h));
  const Var candidate = tape.Tanh(gate(g.w_h, g.u_h, g.b_h, tape.Mul(r, h)));
  const size_t dim = tape.value(h).rows();
  return tape.Add(tape.Mul(tape.Sub(constants.Ones(dim), z), h),
                  tape.Mul(z, candidate));
}

std::vector<Var> EncodeGru(Tape& tape, Constants& constants,
                           const EncoderVars& enc, const std::vector<Var>& xs) {
  const size_t n = xs.size();
  const size_t hidden = tape.value(enc.forward.b_z).rows();
  std::vector<Var> fwd(n), bwd(n);
  Var h = constants.Zeros(hidden);
  for (size_t t = 0; t < n; ++t) {
    h = GruStep(tape, constants, enc.forward, xs[t], h);
    fwd[t] = h;
  }
  h = constants.Zeros(hidden);
  for (size_t t = n; t-- > 0;) {
    h = GruStep(tape, constants, enc.backward, xs[t], h);
    bwd[t] = h;
  }
  std::vector<Var> out(n);
  for (size_t t = 0; t < n; ++t) {
    const Var parts[] = {fwd[t], bwd[t]};
    out[t] = tape.Concat(parts);
  }
  return out;
}

Var ConvAt(Tape& tape, Constants& constants, Var w, Var b,
           const std::vector<Var>& xs, size_t t, size_t width) {
  const size_t in_dim = tape.value(xs[0]).rows();
  const ptrdiff_t half = static_cast<ptrdiff_t>(width / 2);
  std::vector<Var> window;
  window.reserve(width);
  for (ptrdiff_t o = -half; o <= half; ++o) {
    const ptrdiff_t pos = static_cast<ptrdiff_t>(t) + o;
    if (pos < 0 || pos >= static_cast<ptrdiff_t>(xs.size())) {
      window.push_back(constants.Zeros(in_dim));
    } else {
      window.push_back(xs[static_cast<size_t>(pos)]);
    }
  }
  return tape.Tanh(tape.Add(tape.MatVec(w, tape.Concat(window)), b));
}

std::vector<Var> EncodeOnTape(Tape& tape, Constants& constants,
                              EncoderKind kind, const EncoderVars& enc,
                              const std::vector<Var>& xs) {
  if (xs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "encode: empty input sequence");
  }
  switch (kind) {
    case EncoderKind::kNoEnc:
      return xs;
    case EncoderKind::kRnn:
      return EncodeGru(tape, constants, enc, xs);
    case EncoderKind::kConv: {
      std::vector<Var> out(xs.size());
      for (size_t t = 0; t < xs.size(); ++t) {
        const Var parts[] = {
            ConvAt(tape, constants, enc.conv5_w, enc.conv5_b, xs, t, 5),
            ConvAt(tape, constants, enc.conv3_w, enc.conv3_b, xs, t, 3)};
        out[t] = tape.Concat(parts);
      }
      return out;
    }
  }
  return xs;
}

struct AttentionOnTape {
  std::vector<Var> hidden;
  Var alpha;
};

AttentionOnTape AttendOnTape(Tape& tape, const AttentionVars& att,
                             const std::vector<Var>& h) {
  AttentionOnTape out;
  std::vector<Var> scores;
  scores.reserve(h.size());
  for (Var hi : h) {
    const Var u = tape.Tanh(tape.Add(tape.MatVec(att.w, hi), att.b));
    out.hidden.push_back(u);
    scores.push_back(tape.Dot(u, att.context));
  }
  out.alpha = tape.Softmax(tape.Concat(scores));
  return out;
}

std::vector<double> ToVector(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

// One forward pass recorded on a tape.
class ForwardGraph {
 public:
  ForwardGraph(const Model& model, const ForwardOptions& options)
      : model_(model), options_(options), constants_(tape_) {
    VisitParams(
        model.config,
        [&](const std::string& name, const Tensor& t, Var& v) {
          if (name != "embedding") v = tape_.Leaf(t);
        },
        model.params, vars_);
  }

  void Run(const Document& doc) {
    if (doc.sentences.empty() || doc.num_tokens() == 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("empty-document: doc_id {}", doc.doc_id));
    }
    const ModelConfig& config = model_.config;
    std::vector<Var> final_inputs;
    if (config.arch == Architecture::kFlan) {
      std::vector<Var> embedded;
      for (const auto& sentence : doc.sentences) {
        for (TokenId id : sentence) embedded.push_back(Embed(id));
      }
      final_inputs = EncodeOnTape(
          tape_, constants_, config.encoder, vars_.word.encoder,
          Dropout(std::move(embedded), config.dropout_pre_document_encoder));
      Finish(final_inputs, vars_.word.attention);
    } else {
      std::vector<Var> sentence_vectors;
      for (const auto& sentence : doc.sentences) {
        if (sentence.empty()) continue;
        std::vector<Var> embedded;
        for (TokenId id : sentence) embedded.push_back(Embed(id));
        const std::vector<Var> encoded = EncodeOnTape(
            tape_, constants_, config.encoder, vars_.word.encoder,
            Dropout(std::move(embedded), config.dropout_pre_sentence_encoder));
        const AttentionOnTape word_att =
            AttendOnTape(tape_, vars_.word.attention, encoded);
        sentence_vectors.push_back(tape_.WeightedSum(word_att.alpha, encoded));
      }
      final_inputs = EncodeOnTape(
          tape_, constants_, config.encoder, vars_.sentence.encoder,
          Dropout(std::move(sentence_vectors),
                  config.dropout_pre_document_encoder));
      Finish(final_inputs, vars_.sentence.attention);
    }
  }

  ForwardTrace Trace() const {
    ForwardTrace trace;
    for (Var h : final_inputs_) {
      trace.final_inputs.push_back(ToVector(tape_.value(h)));
    }
    for (Var u : final_attention_.hidden) {
      trace.att_hidden.push_back(ToVector(tape_.value(u)));
    }
    trace.alpha =
        ProbDist::FromValues(ToVector(tape_.value(final_attention_.alpha)));
    trace.doc_vector = ToVector(tape_.value(doc_vector_));
    trace.logits = ToVector(tape_.value(logits_));
    trace.output = Softmax(trace.logits);
    trace.predicted = Argmax(trace.output.values());
    trace.final_seq_len = final_inputs_.size();
    return trace;
  }

  Var Loss(uint32_t label) {
    if (label >= model_.config.num_classes) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("label {} >= num_classes {}", label,
                              model_.config.num_classes));
    }
    return tape_.Scale(tape_.Slice(tape_.LogSoftmax(logits_), label, 1), -1.0);
  }

  double ScalarValue(Var v) const { return tape_.value(v)[0]; }

  ModelParams Gradients(Var loss) const {
    const GradMap grads = tape_.Backward(loss);
    ModelParams out = ZerosLike(model_);
    VisitParams(
        model_.config,
        [&](const std::string& name, Tensor& g, const Var& v) {
          if (name == "embedding") return;
          if (const Tensor* found = grads.Find(v)) g = *found;
        },
        out, vars_);
    for (const auto& [leaf, id] : embedding_leaves_) {
      const Tensor* g = grads.Find(leaf);
      if (g == nullptr) continue;
      for (size_t k = 0; k < g->size(); ++k) out.embedding(id, k) += (*g)[k];
    }
    return out;
  }

 private:
  Var Embed(TokenId id) {
    const Tensor& table = model_.params.embedding;
    if (id >= table.rows()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("token id {} >= vocab size {}", id, table.rows()));
    }
    const Var leaf = tape_.Leaf(table.row(id));
    embedding_leaves_.emplace_back(leaf, id);
    return leaf;
  }

  bool Training() const { return options_.mode == Mode::kTrain; }

  Var DropoutOne(Var v, double p) {
    if (!Training() || p <= 0.0) return v;
    if (options_.rng == nullptr) {
      throw Error(ErrorCode::kInvalidArgument,
                  "forward: train-mode dropout requires an rng");
    }
    const Tensor& value = tape_.value(v);
    Tensor mask(value.rows(), value.cols());
    const double keep = 1.0 - p;
    for (double& m : mask.values()) {
      m = options_.rng->Bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    return tape_.DropoutMaskApply(v, std::move(mask));
  }

  std::vector<Var> Dropout(std::vector<Var> vs, double p) {
    for (Var& v : vs) v = DropoutOne(v, p);
    return vs;
  }

  void Finish(const std::vector<Var>& final_inputs,
              const AttentionVars& attention) {
    final_inputs_ = final_inputs;
    final_attention_ = AttendOnTape(tape_, attention, final_inputs);
    Var weights = final_attention_.alpha;
    if (options_.final_alpha_override) {
      const ProbDist alpha =
          ProbDist::FromValues(ToVector(tape_.value(final_attention_.alpha)));
      weights = tape_.Leaf(options_.final_alpha_override(alpha));
    }
    doc_vector_ = tape_.WeightedSum(weights, final_inputs);
    const Var classifier_in =
        DropoutOne(doc_vector_, model_.config.dropout_classifier);
    logits_ = tape_.Add(tape_.MatVec(vars_.classifier_w, classifier_in),
                        vars_.classifier_b);
  }

  const Model& model_;
  const ForwardOptions& options_;
  Tape tape_;
  Constants constants_;
  ModelVars vars_;
  std::vector<std::pair<Var, TokenId>> embedding_leaves_;
  std::vector<Var> final_inputs_;
  AttentionOnTape final_attention_;
  Var doc_vector_;
  Var logits_;
};

}  // namespace

ForwardTrace ForwardFlan(const Model& model, const Document& doc,
                         const ForwardOptions& options) {
  if (model.config.arch != Architecture::kFlan) {
    throw Error(ErrorCode::kInvalidArgument, "ForwardFlan on a HAN model");
  }
  ForwardGraph graph(model, options);
  graph.Run(doc);
  return graph.Trace();
}

ForwardTrace ForwardHan(const Model& model, const Document& doc,
                        const ForwardOptions& options) {
  if (model.config.arch != Architecture::kHan) {
    throw Error(ErrorCode::kInvalidArgument, "ForwardHan on a FLAN model");
  }
  ForwardGraph graph(model, options);
  graph.Run(doc);
  return graph.Trace();
}

ForwardTrace Forward(const Model& model, const Document& doc,
                     const ForwardOptions& options) {
  return model.config.arch == Architecture::kFlan
             ? ForwardFlan(model, doc, options)
             : ForwardHan(model, doc, options);
}

LossAndGrad ComputeLossAndGrad(const Model& model, const Document& doc,
                               const ForwardOptions& options) {
  ForwardGraph graph(model, options);
  graph.Run(doc);
  // Loss() records new nodes, so it runs before Gradients() reads the tape.
  LossAndGrad result;
  const Var loss = graph.Loss(doc.label);
  result.grads = graph.Gradients(loss);
  result.loss = graph.ScalarValue(loss);
  return result;
}

AttentionResult AttentionForward(const AttentionParams& params,
                                 std::span<const std::vector<double>> h) {
  if (h.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "attention_forward: empty input");
  }
  AttentionResult result;
  std::vector<double> scores;
  for (const auto& hi : h) {
    std::vector<double> u = MatVec(params.w, hi);
    for (size_t k = 0; k < u.size(); ++k) u[k] = std::tanh(u[k] + params.b[k]);
    scores.push_back(Dot(u, params.context.values()));
    result.hidden.push_back(std::move(u));
  }
  result.alpha = Softmax(scores);
  result.context_out = WeightedSum(result.alpha.values(), h);
  return result;
}

std::vector<std::vector<double>> Encode(
    EncoderKind kind, const EncoderParams& params,
    std::span<const std::vector<double>> inputs) {
  Tape tape;
  Constants constants(tape);
  EncoderVars vars;
  ModelConfig config;
  config.encoder = kind;
  const auto bind = [&](const std::string&, const Tensor& t, Var& v) {
    v = tape.Leaf(t);
  };
  LevelParamsT<Tensor> level{params, {}};
  LevelParamsT<Var> level_vars;
  switch (kind) {
    case EncoderKind::kRnn:
      internal::VisitGru("", bind, level.encoder.forward,
                         level_vars.encoder.forward);
      internal::VisitGru("", bind, level.encoder.backward,
                         level_vars.encoder.backward);
      break;
    case EncoderKind::kConv:
      bind("", level.encoder.conv5_w, level_vars.encoder.conv5_w);
      bind("", level.encoder.conv5_b, level_vars.encoder.conv5_b);
      bind("", level.encoder.conv3_w, level_vars.encoder.conv3_w);
      bind("", level.encoder.conv3_b, level_vars.encoder.conv3_b);
      break;
    case EncoderKind::kNoEnc:
      break;
  }
  std::vector<Var> xs;
  for (const auto& x : inputs) xs.push_back(tape.Leaf(x));
  std::vector<std::vector<double>> out;
  for (Var v : EncodeOnTape(tape, constants, kind, level_vars.encoder, xs)) {
    out.push_back(ToVector(tape.value(v)));
  }
  return out;
}

std::vector<double> LogitsFromWeights(const Model& model,
                                      const ForwardTrace& trace,
                                      std::span<const double> weights) {
  if (weights.size() != trace.final_seq_len) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("output_from_alpha: {} weights for sequence length "
                            "{}",
                            weights.size(), trace.final_seq_len));
  }
  const std::vector<double> doc = WeightedSum(weights, trace.final_inputs);
  std::vector<double> logits = MatVec(model.params.classifier_w, doc);
  for (size_t i = 0; i < logits.size(); ++i) {
    logits[i] += model.params.classifier_b[i];
  }
  return logits;
}

ProbDist OutputFromAlpha(const Model& model, const ForwardTrace& trace,
                         const ProbDist& alpha_mod) {
  return Softmax(LogitsFromWeights(model, trace, alpha_mod.values()));
}

ProbDist OutputFromZeroVector(const Model& model) {
  return Softmax(model.params.classifier_b.values());
}

double DecisionConfidence(std::span<const double> logits) {
  if (logits.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "decision_confidence: empty-vector");
  }
  const double max_value = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double x : logits) total += std::exp(x - max_value);
  return 1.0 / total;
}

std::vector<double> GradDecisionWrtAlpha(const Model& model,
                                         const ForwardTrace& trace) {
  Tape tape;
  const Var alpha = tape.Leaf(trace.alpha.values());
  std::vector<Var> h;
  h.reserve(trace.final_inputs.size());
  for (const auto& hi : trace.final_inputs) h.push_back(tape.Leaf(hi));
  const Var w = tape.Leaf(model.params.classifier_w);
  const Var b = tape.Leaf(model.params.classifier_b);
  const Var logits = tape.Add(tape.MatVec(w, tape.WeightedSum(alpha, h)), b);
  const Var decision = tape.MaxSelect(tape.Softmax(logits));
  return ToVector(tape.Backward(decision).Get(alpha));
}

}  // namespace attnaudit
