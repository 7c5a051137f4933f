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

#include "attnaudit/audit.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <vector>

#include "attnaudit/models.h"
#include "attnaudit/numerics.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace attnaudit {
namespace {

using ::attnaudit::testing::ExpectError;
using ::attnaudit::testing::TempDir;

// A two-class model whose classifier is the identity on 2-d inputs.
Model IdentityModel(std::vector<double> bias = {0.0, 0.0}) {
  ModelConfig config;
  config.vocab_size = 3;
  config.embed_dim = 2;
  config.num_classes = 2;
  Model model = InitModel(config);
  model.params.classifier_w = Tensor::Matrix(2, 2, {1, 0, 0, 1});
  model.params.classifier_b = Tensor::Vector(std::move(bias));
  return model;
}

ForwardTrace MakeTrace(const Model& model, std::vector<std::vector<double>> h,
                       std::vector<double> alpha) {
  ForwardTrace t;
  t.final_inputs = std::move(h);
  t.alpha = ProbDist::FromValues(std::move(alpha));
  t.final_seq_len = t.alpha.size();
  t.doc_vector = WeightedSum(t.alpha.values(), t.final_inputs);
  t.logits = LogitsFromWeights(model, t, t.alpha.values());
  t.output = Softmax(t.logits);
  t.predicted = Argmax(t.output.values());
  return t;
}

Model RandomModel(Architecture arch, EncoderKind encoder, uint64_t seed) {
  ModelConfig config;
  config.arch = arch;
  config.encoder = encoder;
  config.vocab_size = 30;
  config.embed_dim = 4;
  config.enc_hidden_dim = 3;
  config.att_dim = 4;
  config.num_classes = 3;
  config.seed = seed;
  Model model = InitModel(config);
  Rng rng(seed * 31 + 7);
  VisitParams(config, [&](const std::string&, Tensor& t) {
    for (double& v : t.values()) v = rng.Uniform(-2.0, 2.0);
  }, model.params);
  return model;
}

Document RandomDoc(Rng& rng, uint64_t id, size_t max_sentences = 4) {
  Document doc;
  doc.doc_id = id;
  const size_t sentences = 1 + rng.NextBelow(max_sentences);
  for (size_t s = 0; s < sentences; ++s) {
    std::vector<TokenId> tokens(1 + rng.NextBelow(4));
    for (auto& t : tokens) t = static_cast<TokenId>(2 + rng.NextBelow(28));
    doc.sentences.push_back(tokens);
  }
  return doc;
}

TEST(RankItemsTest, Examples) {
  const Model model = IdentityModel();
  const ForwardTrace t3 = MakeTrace(model, {{1, 0}, {0, 1}, {1, 1}},
                                    {0.5, 0.3, 0.2});
  EXPECT_EQ(RankItems(RankingScheme::kAttention, t3, {}, nullptr).order,
            (std::vector<size_t>{0, 1, 2}));
  const std::vector<double> g3 = {-1.0, 2.0, 0.0};
  EXPECT_EQ(RankItems(RankingScheme::kGradient, t3, g3, nullptr).order,
            (std::vector<size_t>{1, 2, 0}));
  EXPECT_EQ(RankItems(RankingScheme::kGradient, t3, g3, nullptr, true).order,
            (std::vector<size_t>{1, 0, 2}));
  const ForwardTrace t2 = MakeTrace(model, {{1, 0}, {0, 1}}, {0.6, 0.4});
  const std::vector<double> g2 = {0.1, 0.2};
  EXPECT_EQ(RankItems(RankingScheme::kProduct, t2, g2, nullptr).order,
            (std::vector<size_t>{1, 0}));
}

TEST(RankItemsTest, TiesGoToLowerIndex) {
  const Model model = IdentityModel();
  const ForwardTrace t = MakeTrace(model, {{1, 0}, {0, 1}, {1, 1}, {0, 0}},
                                   {0.25, 0.25, 0.25, 0.25});
  EXPECT_EQ(RankItems(RankingScheme::kAttention, t, {}, nullptr).order,
            (std::vector<size_t>{0, 1, 2, 3}));
  const std::vector<double> g = {0.0, 1.0, 0.0, 1.0};
  EXPECT_EQ(RankItems(RankingScheme::kGradient, t, g, nullptr).order,
            (std::vector<size_t>{1, 3, 0, 2}));
}

TEST(RankItemsTest, RandomIsSeededPermutation) {
  const Model model = IdentityModel();
  const ForwardTrace t =
      MakeTrace(model, {{1, 0}, {0, 1}, {1, 1}, {0, 0}, {2, 2}},
                {0.2, 0.2, 0.2, 0.2, 0.2});
  Rng a(9), b(9), c(9);
  const auto order = RankItems(RankingScheme::kRandom, t, {}, &a).order;
  EXPECT_EQ(order, RankItems(RankingScheme::kRandom, t, {}, &b).order);
  EXPECT_EQ(order, c.Permutation(5));
  std::vector<size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<size_t>{0, 1, 2, 3, 4}));
}

TEST(DeltaJsTest, ZeroClassifierGivesZero) {
  Model model = IdentityModel();
  model.params.classifier_w = Tensor(2, 2);
  const ForwardTrace t = MakeTrace(model, {{1, 0}, {0, 3}, {2, 1}},
                                   {0.5, 0.3, 0.2});
  EXPECT_EQ(DeltaJs(model, t, 0, 1), 0.0);
}

TEST(DeltaJsTest, SymmetricItemsGiveZero) {
  const Model model = IdentityModel();
  const ForwardTrace t = MakeTrace(model, {{1, 2}, {0, 3}, {1, 2}},
                                   {0.4, 0.2, 0.4});
  EXPECT_EQ(DeltaJs(model, t, 0, 2), 0.0);
}

TEST(DeltaJsTest, LengthOneFails) {
  const Model model = IdentityModel();
  const ForwardTrace t = MakeTrace(model, {{1, 2}}, {1.0});
  ExpectError([&] { DeltaJs(model, t, 0, 0); }, ErrorCode::kInvalidArgument,
              "length-one");
}

double HandJs(const std::vector<double>& p, const std::vector<double>& q) {
  double js = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return js;
}

TEST(DeltaJsTest, MatchesHandChainedRandomToy) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    Model model = IdentityModel();
    model.params.classifier_w =
        Tensor::Matrix(2, 2, {rng.Uniform(-3, 3), rng.Uniform(-3, 3),
                              rng.Uniform(-3, 3), rng.Uniform(-3, 3)});
    std::vector<std::vector<double>> h(3, std::vector<double>(2));
    for (auto& v : h) {
      for (double& x : v) x = rng.Uniform(-2, 2);
    }
    std::vector<double> a = {rng.Uniform(0.1, 1), rng.Uniform(0.1, 1),
                             rng.Uniform(0.1, 1)};
    const double s = a[0] + a[1] + a[2];
    for (double& x : a) x /= s;
    const ForwardTrace t = MakeTrace(model, h, a);
    const auto q_without = [&](size_t k) {
      std::vector<double> v(2, 0.0);
      for (size_t i = 0; i < 3; ++i) {
        if (i == k) continue;
        const double w = a[i] / (1.0 - a[k]);
        for (size_t j = 0; j < 2; ++j) v[j] += w * h[i][j];
      }
      const auto& W = model.params.classifier_w;
      const double x0 = W(0, 0) * v[0] + W(0, 1) * v[1];
      const double x1 = W(1, 0) * v[0] + W(1, 1) * v[1];
      const double p0 = 1.0 / (1.0 + std::exp(x1 - x0));
      return std::vector<double>{p0, 1.0 - p0};
    };
    const std::vector<double> p(t.output.values().begin(),
                                t.output.values().end());
    const double expected = HandJs(p, q_without(0)) - HandJs(p, q_without(2));
    EXPECT_NEAR(DeltaJs(model, t, 0, 2), expected, 1e-12);
  }
}

TEST(SingleWeightTest, PlantedItemFlipsAndRandomDoesNot) {
  const Model model = IdentityModel();
  const ForwardTrace t = MakeTrace(model, {{0, 5}, {1, 0}}, {0.9, 0.1});
  ASSERT_EQ(t.predicted, 1);
  Rng rng(1);
  const SingleWeightOutcome o =
      SingleWeightTest(model, t, RankingScheme::kAttention, rng);
  EXPECT_EQ(o.i_star, 0);
  EXPECT_EQ(o.r, 1);
  EXPECT_TRUE(o.flip_star);
  EXPECT_FALSE(o.flip_r);
  EXPECT_NEAR(o.delta_alpha, 0.8, 1e-15);
  EXPECT_GT(o.delta_js, 0.0);
  // Replay: erasing item 0 leaves doc vector h_1 which favours class 0.
  const size_t zero[] = {0};
  EXPECT_EQ(Argmax(ErasedOutput(model, t, zero).values()), 0);
}

TEST(SingleWeightTest, IdenticalInputsNeverFlip) {
  const Model model = IdentityModel({0.0, 0.1});
  const ForwardTrace t = MakeTrace(model, {{1, 1}, {1, 1}, {1, 1}},
                                   {0.5, 0.2, 0.3});
  Rng rng(2);
  for (RankingScheme target : kTargetSchemes) {
    const SingleWeightOutcome o = SingleWeightTest(model, t, target, rng);
    EXPECT_FALSE(o.flip_star);
    EXPECT_FALSE(o.flip_r);
  }
}

TEST(SingleWeightTest, RandomItemIsUniformOverOthersAndSeeded) {
  const Model model = IdentityModel();
  const ForwardTrace t = MakeTrace(model, {{1, 0}, {0, 1}, {1, 1}, {2, 0}},
                                   {0.1, 0.6, 0.2, 0.1});
  std::map<size_t, int> counts;
  Rng rng(3);
  const int trials = 30000;
  for (int i = 0; i < trials; ++i) {
    const auto o = SingleWeightTest(model, t, RankingScheme::kAttention, rng);
    ASSERT_EQ(o.i_star, 1);
    ASSERT_NE(o.r, o.i_star);
    EXPECT_GE(o.delta_alpha, 0.0);
    ++counts[o.r];
  }
  EXPECT_EQ(counts.size(), 3);
  const double p = 1.0 / 3.0;
  for (const auto& [r, c] : counts) {
    EXPECT_LE(std::abs(c - trials * p), 5 * std::sqrt(trials * p * (1 - p)));
  }
  Rng a(4), b(4);
  EXPECT_EQ(SingleWeightTest(model, t, RankingScheme::kProduct, a),
            SingleWeightTest(model, t, RankingScheme::kProduct, b));
}

TEST(RemovalCurveTest, FirstItemFlips) {
  const Model model = IdentityModel();
  const ForwardTrace t =
      MakeTrace(model, {{0, 5}, {1, 0}, {1, 0}, {1, 0}}, {0.7, 0.1, 0.1, 0.1});
  const RemovalOutcome o =
      RemovalCurve(model, t, {RankingScheme::kAttention, {0, 1, 2, 3}});
  EXPECT_TRUE(o.flipped);
  EXPECT_EQ(o.removed_count, 1);
  EXPECT_DOUBLE_EQ(o.fraction_removed, 0.25);
  EXPECT_DOUBLE_EQ(o.prob_mass_zeroed, 0.7);
  EXPECT_FALSE(o.used_zero_vector_terminal);
}

TEST(RemovalCurveTest, FlipsPartWayWithMassFromOriginalAlpha) {
  const Model model = IdentityModel();
  // Class 1 until both class-1 items are gone.
  const ForwardTrace t =
      MakeTrace(model, {{0, 4}, {0, 4}, {1, 0}}, {0.3, 0.2, 0.5});
  const RemovalOutcome o =
      RemovalCurve(model, t, {RankingScheme::kRandom, {1, 0, 2}});
  EXPECT_TRUE(o.flipped);
  EXPECT_EQ(o.removed_count, 2);
  EXPECT_DOUBLE_EQ(o.fraction_removed, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(o.prob_mass_zeroed, 0.5);
}

TEST(RemovalCurveTest, ConstantClassifierNeverFlips) {
  Model model = IdentityModel({0.3, 0.0});
  model.params.classifier_w = Tensor(2, 2);
  const ForwardTrace t = MakeTrace(model, {{0, 4}, {5, 0}, {1, 0}},
                                   {0.3, 0.2, 0.5});
  const RemovalOutcome o =
      RemovalCurve(model, t, {RankingScheme::kAttention, {2, 0, 1}});
  EXPECT_FALSE(o.flipped);
  EXPECT_EQ(o.removed_count, 3);
  EXPECT_FALSE(BruteForceMinFlip(model, t).has_value());
}

TEST(RemovalCurveTest, TwoItemsFlipOnlyAtZeroVector) {
  const Model model = IdentityModel({0.0, 0.5});
  const ForwardTrace t = MakeTrace(model, {{1, 0}, {1, 0}}, {0.6, 0.4});
  ASSERT_EQ(t.predicted, 0);
  const RemovalOutcome o =
      RemovalCurve(model, t, {RankingScheme::kAttention, {0, 1}});
  EXPECT_TRUE(o.flipped);
  EXPECT_TRUE(o.used_zero_vector_terminal);
  EXPECT_EQ(o.removed_count, 2);
  EXPECT_EQ(o.fraction_removed, 1.0);
  EXPECT_EQ(o.prob_mass_zeroed, 1.0);
  EXPECT_EQ(BruteForceMinFlip(model, t), 2);
}

TEST(OracleTest, PlantedSingleItemGivesOne) {
  const Model model = IdentityModel();
  const ForwardTrace t =
      MakeTrace(model, {{1, 0}, {0, 5}, {1, 0}}, {0.2, 0.6, 0.2});
  EXPECT_EQ(BruteForceMinFlip(model, t), 1);
}

TEST(OracleTest, CapIsEnforced) {
  const Model model = IdentityModel();
  std::vector<std::vector<double>> h(16, {1.0, 0.0});
  const ForwardTrace t =
      MakeTrace(model, h, std::vector<double>(16, 1.0 / 16));
  ExpectError([&] { BruteForceMinFlip(model, t); }, ErrorCode::kOracleCap,
              "oracle-cap");
  EXPECT_NO_THROW(BruteForceMinFlip(model, t, 16));
}

// Independent exhaustive search over bitmasks.
std::optional<size_t> MaskOracle(const Model& model, const ForwardTrace& t) {
  const size_t n = t.final_seq_len;
  std::optional<size_t> best;
  for (uint32_t mask = 1; mask < (1u << n); ++mask) {
    const size_t size = std::popcount(mask);
    if (best && size >= *best) continue;
    ProbDist q;
    if (size == n) {
      q = Softmax(model.params.classifier_b.values());
    } else {
      std::vector<double> w(n);
      double survivors = 0.0;
      for (size_t i = 0; i < n; ++i) {
        w[i] = (mask >> i & 1u) ? 0.0 : t.alpha[i];
        survivors += w[i];
      }
      for (double& x : w) x /= survivors;
      q = Softmax(LogitsFromWeights(model, t, w));
    }
    if (Argmax(q.values()) != t.predicted) best = size;
  }
  return best;
}

TEST(OracleTest, BoundsEveryFlippingCurveAndMatchesMaskSearch) {
  Rng rng(5);
  size_t checked = 0;
  for (uint64_t seed = 1; seed <= 30; ++seed) {
    const Model model = RandomModel(
        seed % 2 ? Architecture::kFlan : Architecture::kHan,
        static_cast<EncoderKind>(seed % 3), seed);
    for (int d = 0; d < 5; ++d) {
      const Document doc = RandomDoc(rng, d);
      const ForwardTrace t = Forward(model, doc);
      if (t.final_seq_len < 2 || t.final_seq_len > 10) continue;
      const auto oracle = BruteForceMinFlip(model, t);
      EXPECT_EQ(oracle, MaskOracle(model, t));
      const auto grads = GradDecisionWrtAlpha(model, t);
      for (RankingScheme s : kAllSchemes) {
        const RemovalOutcome o =
            RemovalCurve(model, t, RankItems(s, t, grads, &rng));
        if (!o.flipped) continue;
        ASSERT_TRUE(oracle.has_value());
        EXPECT_LE(*oracle, o.removed_count);
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(AuditDocumentTest, LengthOneIsExcluded) {
  const Model model = RandomModel(Architecture::kFlan, EncoderKind::kRnn, 2);
  const AuditRecord r = AuditDocument(model, Document{{{5}}, 0, 3}, {});
  EXPECT_EQ(r.excluded, ExclusionReason::kLengthOne);
  EXPECT_EQ(r.final_seq_len, 1);
  EXPECT_TRUE(r.single_weight.empty());
  EXPECT_TRUE(r.removal.empty());
}

TEST(AuditDocumentTest, NeverFlipsIsExcludedWithoutOutcomes) {
  Model model = RandomModel(Architecture::kFlan, EncoderKind::kNoEnc, 3);
  model.params.classifier_w = Tensor(3, model.params.classifier_w.cols());
  const AuditRecord r = AuditDocument(model, Document{{{5, 6, 7}}, 0, 4}, {});
  EXPECT_EQ(r.excluded, ExclusionReason::kNeverFlips);
  EXPECT_TRUE(r.single_weight.empty());
  EXPECT_TRUE(r.removal.empty());
}

TEST(AuditCorpusTest, PartitionAndOrderIndependence) {
  const Model model = RandomModel(Architecture::kHan, EncoderKind::kConv, 4);
  Rng rng(6);
  std::vector<Document> corpus;
  for (uint64_t id = 0; id < 40; ++id) corpus.push_back(RandomDoc(rng, id));
  AuditOptions options;
  options.seed = 17;
  const auto base = AuditCorpus(model, corpus, options);
  ASSERT_EQ(base.size(), corpus.size());
  size_t included = 0, excluded = 0;
  for (size_t i = 0; i < base.size(); ++i) {
    EXPECT_EQ(base[i].doc_id, i);
    (base[i].excluded ? excluded : included) += 1;
    if (!base[i].excluded) {
      EXPECT_EQ(base[i].single_weight.size(), 3);
      EXPECT_EQ(base[i].removal.size(), 4);
      EXPECT_GE(base[i].single_weight[0].delta_alpha, 0.0);
    }
  }
  EXPECT_EQ(included + excluded, corpus.size());
  EXPECT_GT(included, 0);
  rng.Shuffle(corpus);
  options.workers = 3;
  EXPECT_EQ(AuditCorpus(model, corpus, options), base);
  options.seed = 18;
  EXPECT_NE(AuditCorpus(model, corpus, options), base);
}

TEST(AuditCorpusTest, AllSingleTokenDocsAreExcluded) {
  const Model model = RandomModel(Architecture::kFlan, EncoderKind::kConv, 5);
  std::vector<Document> corpus;
  for (uint64_t id = 0; id < 5; ++id) {
    corpus.push_back(Document{{{static_cast<TokenId>(2 + id)}}, 0, id});
  }
  for (const auto& r : AuditCorpus(model, corpus, {})) {
    EXPECT_EQ(r.excluded, ExclusionReason::kLengthOne);
  }
}

TEST(AuditJsonTest, RoundTripIsExact) {
  TempDir dir;
  const Model model = RandomModel(Architecture::kFlan, EncoderKind::kRnn, 6);
  Rng rng(7);
  std::vector<Document> corpus;
  for (uint64_t id = 0; id < 20; ++id) corpus.push_back(RandomDoc(rng, id));
  const auto records = AuditCorpus(model, corpus, {});
  for (const auto& r : records) {
    EXPECT_EQ(AuditRecordFromJson(AuditRecordToJson(r)), r);
  }
  WriteAuditJsonl(dir.path() / "a.jsonl", records);
  EXPECT_EQ(ReadAuditJsonl(dir.path() / "a.jsonl"), records);
}

TEST(AuditJsonTest, FieldNamesAreFixed) {
  const Model model = IdentityModel();
  AuditRecord r;
  r.doc_id = 3;
  r.final_seq_len = 2;
  r.single_weight.push_back({RankingScheme::kAttention, 0, 1, 0.5, 0.1, true,
                             false});
  r.removal.push_back({RankingScheme::kRandom, 2, 1.0, 1.0, true, true});
  const std::string line = AuditRecordToJson(r);
  for (const char* key :
       {"\"doc_id\"", "\"final_seq_len\"", "\"excluded\"", "\"single_weight\"",
        "\"removal\"", "\"removed_count\"", "\"fraction_removed\"",
        "\"prob_mass_zeroed\"", "\"flipped\"", "\"zero_vector_terminal\""}) {
    EXPECT_NE(line.find(key), std::string::npos) << key;
  }
  EXPECT_EQ(line.find('\n'), std::string::npos);
}

TEST(AuditJsonTest, BadLineReportsLocation) {
  TempDir dir;
  testing::WriteFile(dir.path() / "bad.jsonl", "{\"doc_id\": 1}\n");
  ExpectError([&] { ReadAuditJsonl(dir.path() / "bad.jsonl"); },
              ErrorCode::kData, "bad.jsonl:1");
}

}  // namespace
}  // namespace attnaudit
