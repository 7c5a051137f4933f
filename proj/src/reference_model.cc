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

#include "attnaudit/reference_model.h"

#include <cmath>

#include "attnaudit/error.h"

namespace attnaudit {

namespace {

using Vec = std::vector<long double>;

Vec Affine(const Tensor& w, const Vec& x, const Tensor& b) {
  Vec out(w.rows());
  for (size_t r = 0; r < w.rows(); ++r) {
    long double acc = b[r];
    for (size_t c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
    out[r] = acc;
  }
  return out;
}

Vec Plus(Vec a, const Vec& b) {
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Vec Times(const Tensor& w, const Vec& x) {
  Vec out(w.rows(), 0.0L);
  for (size_t r = 0; r < w.rows(); ++r) {
    for (size_t c = 0; c < w.cols(); ++c) out[r] += w(r, c) * x[c];
  }
  return out;
}

long double Sigmoid(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

Vec GruStep(const GruParamsT<Tensor>& g, const Vec& x, const Vec& h) {
  const Vec z_pre = Plus(Affine(g.w_z, x, g.b_z), Times(g.u_z, h));
  const Vec r_pre = Plus(Affine(g.w_r, x, g.b_r), Times(g.u_r, h));
  Vec rh(h.size());
  for (size_t i = 0; i < h.size(); ++i) rh[i] = Sigmoid(r_pre[i]) * h[i];
  const Vec cand_pre = Plus(Affine(g.w_h, x, g.b_h), Times(g.u_h, rh));
  Vec next(h.size());
  for (size_t i = 0; i < h.size(); ++i) {
    const long double z = Sigmoid(z_pre[i]);
    next[i] = (1.0L - z) * h[i] + z * std::tanh(cand_pre[i]);
  }
  return next;
}

Vec Conv(const Tensor& w, const Tensor& b, const std::vector<Vec>& xs,
         size_t t, size_t width) {
  const size_t dim = xs[0].size();
  Vec window;
  for (size_t k = 0; k < width; ++k) {
    const long long pos = static_cast<long long>(t + k) -
                          static_cast<long long>(width / 2);
    if (pos < 0 || pos >= static_cast<long long>(xs.size())) {
      window.insert(window.end(), dim, 0.0L);
    } else {
      window.insert(window.end(), xs[pos].begin(), xs[pos].end());
    }
  }
  Vec out = Affine(w, window, b);
  for (long double& v : out) v = std::tanh(v);
  return out;
}

std::vector<Vec> RunEncoder(EncoderKind kind, const EncoderParams& p,
                            const std::vector<Vec>& xs) {
  const size_t n = xs.size();
  std::vector<Vec> out(n);
  switch (kind) {
    case EncoderKind::kNoEnc:
      return xs;
    case EncoderKind::kRnn: {
      const size_t hidden = p.forward.b_z.rows();
      Vec h(hidden, 0.0L);
      for (size_t t = 0; t < n; ++t) {
        h = GruStep(p.forward, xs[t], h);
        out[t] = h;
      }
      h.assign(hidden, 0.0L);
      for (size_t t = n; t-- > 0;) {
        h = GruStep(p.backward, xs[t], h);
        out[t].insert(out[t].end(), h.begin(), h.end());
      }
      return out;
    }
    case EncoderKind::kConv:
      for (size_t t = 0; t < n; ++t) {
        out[t] = Conv(p.conv5_w, p.conv5_b, xs, t, 5);
        const Vec narrow = Conv(p.conv3_w, p.conv3_b, xs, t, 3);
        out[t].insert(out[t].end(), narrow.begin(), narrow.end());
      }
      return out;
  }
  return out;
}

Vec Attend(const AttentionParams& p, const std::vector<Vec>& h) {
  Vec scores(h.size());
  for (size_t i = 0; i < h.size(); ++i) {
    const Vec u = Affine(p.w, h[i], p.b);
    long double s = 0.0L;
    for (size_t k = 0; k < u.size(); ++k) s += std::tanh(u[k]) * p.context[k];
    scores[i] = s;
  }
  long double top = scores[0];
  for (long double s : scores) top = std::max(top, s);
  long double total = 0.0L;
  for (long double& s : scores) {
    s = std::exp(s - top);
    total += s;
  }
  Vec pooled(h[0].size(), 0.0L);
  for (size_t i = 0; i < h.size(); ++i) {
    for (size_t k = 0; k < pooled.size(); ++k) {
      pooled[k] += scores[i] / total * h[i][k];
    }
  }
  return pooled;
}

void Drop(Vec& v, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return;
  const double keep = 1.0 - p;
  for (long double& x : v) {
    // Same draw and scale as the train-mode forward pass.
    const double mask = rng->Bernoulli(keep) ? 1.0 / keep : 0.0;
    x *= mask;
  }
}

Vec Embed(const Model& model, TokenId id) {
  const auto row = model.params.embedding.row(id);
  return Vec(row.begin(), row.end());
}

}  // namespace

std::vector<long double> ReferenceLogits(const Model& model,
                                         const Document& doc, Rng* rng) {
  const ModelConfig& config = model.config;
  std::vector<Vec> final_inputs;
  const AttentionParams* final_attention = nullptr;
  if (config.arch == Architecture::kFlan) {
    std::vector<Vec> xs;
    for (const auto& sentence : doc.sentences) {
      for (TokenId id : sentence) xs.push_back(Embed(model, id));
    }
    for (Vec& x : xs) Drop(x, config.dropout_pre_document_encoder, rng);
    final_inputs = RunEncoder(config.encoder, model.params.word.encoder, xs);
    final_attention = &model.params.word.attention;
  } else {
    std::vector<Vec> sentence_vectors;
    for (const auto& sentence : doc.sentences) {
      if (sentence.empty()) continue;
      std::vector<Vec> xs;
      for (TokenId id : sentence) xs.push_back(Embed(model, id));
      for (Vec& x : xs) Drop(x, config.dropout_pre_sentence_encoder, rng);
      sentence_vectors.push_back(
          Attend(model.params.word.attention,
                 RunEncoder(config.encoder, model.params.word.encoder, xs)));
    }
    for (Vec& s : sentence_vectors) {
      Drop(s, config.dropout_pre_document_encoder, rng);
    }
    final_inputs = RunEncoder(config.encoder, model.params.sentence.encoder,
                              sentence_vectors);
    final_attention = &model.params.sentence.attention;
  }
  if (final_inputs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "reference: empty-document");
  }
  Vec doc_vector = Attend(*final_attention, final_inputs);
  Drop(doc_vector, config.dropout_classifier, rng);
  return Affine(model.params.classifier_w, doc_vector,
                model.params.classifier_b);
}

long double ReferenceLoss(const Model& model, const Document& doc,
                          uint64_t dropout_seed) {
  Rng rng(dropout_seed);
  const Vec logits = ReferenceLogits(model, doc, &rng);
  long double top = logits[0];
  for (long double x : logits) top = std::max(top, x);
  long double total = 0.0L;
  for (long double x : logits) total += std::exp(x - top);
  return -(logits.at(doc.label) - top - std::log(total));
}

}  // namespace attnaudit
