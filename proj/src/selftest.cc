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

#include "attnaudit/selftest.h"

#include <cmath>

#include "attnaudit/error.h"
#include "attnaudit/reference_model.h"
#include "fmt/format.h"

namespace attnaudit {

namespace {

uint32_t Between(Rng& rng, uint32_t lo, uint32_t hi) {
  return lo + static_cast<uint32_t>(rng.NextBelow(hi - lo + 1));
}

ProbDist RandomDistribution(Rng& rng) {
  const size_t n = 2 + rng.NextBelow(9);
  std::vector<double> logits(n);
  // Wide logits give near-one-hot distributions as well as flat ones.
  const double scale = rng.Uniform(0.0, 30.0);
  for (double& x : logits) x = rng.Uniform(-scale, scale);
  return Softmax(logits);
}

}  // namespace

ModelConfig RandomSmallConfig(Architecture arch, EncoderKind encoder,
                              Rng& rng) {
  ModelConfig config;
  config.arch = arch;
  config.encoder = encoder;
  config.vocab_size = Between(rng, 3, 12);
  config.embed_dim = Between(rng, 1, 8);
  config.enc_hidden_dim = Between(rng, 1, 4);
  config.att_dim = Between(rng, 1, 8);
  config.num_classes = Between(rng, 2, 5);
  config.dropout_pre_sentence_encoder = rng.Bernoulli(0.5) ? 0.25 : 0.0;
  config.dropout_pre_document_encoder = rng.Bernoulli(0.5) ? 0.25 : 0.0;
  config.dropout_classifier = rng.Bernoulli(0.5) ? 0.25 : 0.0;
  config.seed = rng.NextU64();
  return config;
}

Document RandomDocument(const ModelConfig& config, Rng& rng,
                        uint32_t max_sentences, uint32_t max_length) {
  Document doc;
  doc.label = static_cast<uint32_t>(rng.NextBelow(config.num_classes));
  doc.sentences.resize(Between(rng, 1, max_sentences));
  for (auto& sentence : doc.sentences) {
    sentence.resize(Between(rng, 1, max_length));
    for (TokenId& id : sentence) {
      id = static_cast<TokenId>(1 + rng.NextBelow(config.vocab_size - 1));
    }
  }
  return doc;
}

GradCheckResult CheckLossGradient(const Model& model, const Document& doc,
                                  uint64_t dropout_seed, double eps) {
  Rng rng(dropout_seed);
  ForwardOptions options;
  options.mode = Mode::kTrain;
  options.rng = &rng;
  const LossAndGrad lg = ComputeLossAndGrad(model, doc, options);
  const std::vector<double> analytic = FlattenParams(model.config, lg.grads);
  const std::vector<double> x = FlattenParams(model.config, model.params);
  // Differences are taken against the loss at x in extended precision, so
  // the narrowing to double keeps the significant digits of the change.
  const long double base = ReferenceLoss(model, doc, dropout_seed);
  Model probe = model;
  return FiniteDiffCheck(
      [&](std::span<const double> point) {
        UnflattenParams(probe.config, point, probe.params);
        return static_cast<double>(ReferenceLoss(probe, doc, dropout_seed) -
                                   base);
      },
      x, analytic, eps);
}

GradCheckResult CheckDecisionGradient(const Model& model, const Document& doc,
                                      double eps) {
  const ForwardTrace trace = Forward(model, doc);
  const std::vector<double> analytic = GradDecisionWrtAlpha(model, trace);
  const std::vector<double> alpha(trace.alpha.values().begin(),
                                  trace.alpha.values().end());
  return FiniteDiffCheck(
      [&](std::span<const double> weights) {
        return DecisionConfidence(LogitsFromWeights(model, trace, weights));
      },
      alpha, analytic, eps);
}

std::vector<SelftestCheck> RunSelftest(const SelftestOptions& options) {
  std::vector<SelftestCheck> checks;
  Rng rng(options.seed);
  for (Architecture arch : {Architecture::kFlan, Architecture::kHan}) {
    for (EncoderKind encoder :
         {EncoderKind::kRnn, EncoderKind::kConv, EncoderKind::kNoEnc}) {
      double worst_loss = 0.0;
      double worst_decision = 0.0;
      std::string failure;
      for (uint32_t i = 0; i < options.configs_per_architecture; ++i) {
        const Model model = InitModel(RandomSmallConfig(arch, encoder, rng));
        const Document doc = RandomDocument(model.config, rng);
        const GradCheckResult loss =
            CheckLossGradient(model, doc, rng.NextU64());
        const GradCheckResult decision = CheckDecisionGradient(model, doc);
        worst_loss = std::max(worst_loss, loss.max_rel_error);
        worst_decision = std::max(worst_decision, decision.max_rel_error);
        if (failure.empty() &&
            (loss.max_rel_error > options.gradient_tolerance ||
             decision.max_rel_error > options.gradient_tolerance)) {
          failure = fmt::format(" (first failure: config {})", i);
        }
      }
      const bool passed = worst_loss <= options.gradient_tolerance &&
                          worst_decision <= options.gradient_tolerance;
      checks.push_back(
          {fmt::format("gradients/{}", ModelName(arch, encoder)), passed,
           fmt::format("max rel error: loss {:.3g}, decision {:.3g}{}",
                       worst_loss, worst_decision, failure)});
    }
  }

  size_t asymmetric = 0;
  size_t out_of_range = 0;
  size_t self_nonzero = 0;
  for (uint32_t i = 0; i < options.divergence_pairs; ++i) {
    const ProbDist p = RandomDistribution(rng);
    std::vector<double> q_logits(p.size());
    for (double& x : q_logits) x = rng.Uniform(-10.0, 10.0);
    const ProbDist q = Softmax(q_logits);
    const double pq = JsDivergence(p, q);
    const double qp = JsDivergence(q, p);
    if (pq != qp) ++asymmetric;
    if (!(pq >= 0.0 && pq <= std::log(2.0) + 1e-12)) ++out_of_range;
    if (JsDivergence(p, p) > 1e-12) ++self_nonzero;
  }
  checks.push_back({"divergence/symmetry", asymmetric == 0,
                    fmt::format("{} of {} pairs differ under swap", asymmetric,
                                options.divergence_pairs)});
  checks.push_back({"divergence/range", out_of_range == 0,
                    fmt::format("{} of {} values outside [0, ln 2]",
                                out_of_range, options.divergence_pairs)});
  checks.push_back({"divergence/identity", self_nonzero == 0,
                    fmt::format("{} of {} JS(p, p) above 1e-12", self_nonzero,
                                options.divergence_pairs)});
  return checks;
}

}  // namespace attnaudit
