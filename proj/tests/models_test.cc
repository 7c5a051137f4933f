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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "attnaudit/numerics.h"
#include "attnaudit/reference_model.h"
#include "attnaudit/selftest.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace attnaudit {
namespace {

using ::attnaudit::testing::ExpectError;
using ::attnaudit::testing::TempDir;
using ::attnaudit::testing::WriteFile;

constexpr Architecture kArchs[] = {Architecture::kFlan, Architecture::kHan};
constexpr EncoderKind kEncoders[] = {EncoderKind::kRnn, EncoderKind::kConv,
                                     EncoderKind::kNoEnc};

Tensor RandomTensor(size_t rows, size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.Uniform(-1.0, 1.0);
  return t;
}

std::vector<std::vector<double>> RandomVectors(size_t n, size_t dim, Rng& rng) {
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& v : out) {
    for (double& x : v) x = rng.Uniform(-1.0, 1.0);
  }
  return out;
}

AttentionParams RandomAttention(size_t att_dim, size_t enc_dim, Rng& rng) {
  return {RandomTensor(att_dim, enc_dim, rng), RandomTensor(att_dim, 1, rng),
          RandomTensor(att_dim, 1, rng)};
}

Model SmallModel(Architecture arch, EncoderKind encoder, uint64_t seed = 3) {
  ModelConfig config;
  config.arch = arch;
  config.encoder = encoder;
  config.vocab_size = 20;
  config.embed_dim = 5;
  config.enc_hidden_dim = 3;
  config.att_dim = 4;
  config.num_classes = 3;
  config.seed = seed;
  Model model = InitModel(config);
  // Larger weights than the default init so outputs are far from uniform.
  Rng rng(seed + 100);
  VisitParams(config, [&](const std::string&, Tensor& t) {
    for (double& v : t.values()) v = rng.Uniform(-1.0, 1.0);
  }, model.params);
  return model;
}

Document Doc(std::vector<std::vector<TokenId>> sentences) {
  return Document{std::move(sentences), 0, 0};
}

TEST(AttentionTest, ZeroContextGivesUniformWeights) {
  Rng rng(1);
  AttentionParams params = RandomAttention(3, 2, rng);
  params.context = Tensor(3, 1);
  const auto result = AttentionForward(params, RandomVectors(4, 2, rng));
  for (size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(result.alpha[i], 0.25);
}

TEST(AttentionTest, IdenticalInputsGiveUniformWeightsAndThatInput) {
  Rng rng(2);
  const AttentionParams params = RandomAttention(3, 2, rng);
  const std::vector<std::vector<double>> h(5, {0.3, -0.7});
  const auto result = AttentionForward(params, h);
  for (size_t i = 0; i < 5; ++i) EXPECT_NEAR(result.alpha[i], 0.2, 1e-15);
  EXPECT_NEAR(result.context_out[0], 0.3, 1e-15);
  EXPECT_NEAR(result.context_out[1], -0.7, 1e-15);
}

TEST(AttentionTest, MatchesHandChainedEvaluation) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionParams p = RandomAttention(3, 5, rng);
    const auto h = RandomVectors(4, 5, rng);
    const auto result = AttentionForward(p, h);
    std::vector<double> scores;
    for (const auto& hi : h) {
      double s = 0.0;
      for (size_t a = 0; a < 3; ++a) {
        double pre = p.b[a];
        for (size_t j = 0; j < 5; ++j) pre += p.w(a, j) * hi[j];
        s += std::tanh(pre) * p.context[a];
      }
      scores.push_back(s);
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double s : scores) total += std::exp(s - mx);
    for (size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(result.alpha[i], std::exp(scores[i] - mx) / total, 1e-14);
    }
  }
}

TEST(AttentionTest, EmptyInputFails) {
  Rng rng(4);
  const AttentionParams p = RandomAttention(2, 2, rng);
  EXPECT_THROW(AttentionForward(p, {}), Error);
}

TEST(EncodeTest, NoEncIsIdentity) {
  Rng rng(5);
  const auto inputs = RandomVectors(6, 3, rng);
  EXPECT_EQ(Encode(EncoderKind::kNoEnc, EncoderParams{}, inputs), inputs);
}

TEST(EncodeTest, ZeroConvolutionGivesZeroVectors) {
  EncoderParams params;
  params.conv5_w = Tensor(2, 15);
  params.conv5_b = Tensor(2, 1);
  params.conv3_w = Tensor(2, 9);
  params.conv3_b = Tensor(2, 1);
  Rng rng(6);
  for (const auto& v : Encode(EncoderKind::kConv, params,
                              RandomVectors(4, 3, rng))) {
    EXPECT_EQ(v, std::vector<double>(4, 0.0));
  }
}

TEST(EncodeTest, ConvolutionMatchesZeroPaddedWindows) {
  Rng rng(7);
  EncoderParams p;
  p.conv5_w = RandomTensor(2, 10, rng);
  p.conv5_b = RandomTensor(2, 1, rng);
  p.conv3_w = RandomTensor(2, 6, rng);
  p.conv3_b = RandomTensor(2, 1, rng);
  const auto x = RandomVectors(3, 2, rng);
  const auto out = Encode(EncoderKind::kConv, p, x);
  const auto bank = [&](const Tensor& w, const Tensor& b, int width, int t,
                        size_t f) {
    double s = b[f];
    for (int o = 0; o < width; ++o) {
      const int pos = t + o - width / 2;
      if (pos < 0 || pos >= 3) continue;
      for (size_t j = 0; j < 2; ++j) s += w(f, o * 2 + j) * x[pos][j];
    }
    return std::tanh(s);
  };
  for (int t = 0; t < 3; ++t) {
    for (size_t f = 0; f < 2; ++f) {
      EXPECT_NEAR(out[t][f], bank(p.conv5_w, p.conv5_b, 5, t, f), 1e-14);
      EXPECT_NEAR(out[t][2 + f], bank(p.conv3_w, p.conv3_b, 3, t, f), 1e-14);
    }
  }
}

TEST(EncodeTest, RnnLengthOneHalvesEqualOneStepFromZero) {
  Rng rng(8);
  GruParamsT<Tensor> g;
  auto fill = [&](const std::string& name, Tensor& t) {
    t = name[0] == 'b' ? RandomTensor(3, 1, rng)
                       : RandomTensor(3, name[0] == 'w' ? 2 : 3, rng);
  };
  internal::VisitGru("", fill, g);
  EncoderParams params;
  params.forward = g;
  params.backward = g;
  const std::vector<std::vector<double>> x = {{0.4, -1.1}};
  const auto out = Encode(EncoderKind::kRnn, params, x);
  ASSERT_EQ(out.size(), 1);
  ASSERT_EQ(out[0].size(), 6);
  // From h = 0 one step gives h' = z * tanh(W_h x + b_h).
  for (size_t k = 0; k < 3; ++k) {
    const double z = 1.0 / (1.0 + std::exp(-(g.w_z(k, 0) * 0.4 -
                                             g.w_z(k, 1) * 1.1 + g.b_z[k])));
    const double c = std::tanh(g.w_h(k, 0) * 0.4 - g.w_h(k, 1) * 1.1 + g.b_h[k]);
    EXPECT_NEAR(out[0][k], z * c, 1e-15);
    EXPECT_EQ(out[0][k], out[0][3 + k]);
  }
}

TEST(EncodeTest, DimensionMismatchFails) {
  Rng rng(9);
  EncoderParams p;
  p.conv5_w = RandomTensor(2, 10, rng);
  p.conv5_b = RandomTensor(2, 1, rng);
  p.conv3_w = RandomTensor(2, 6, rng);
  p.conv3_b = RandomTensor(2, 1, rng);
  EXPECT_THROW(Encode(EncoderKind::kConv, p, RandomVectors(3, 3, rng)), Error);
}

class ArchitectureTest
    : public ::testing::TestWithParam<std::tuple<Architecture, EncoderKind>> {
 protected:
  Model MakeModel() const {
    return SmallModel(std::get<0>(GetParam()), std::get<1>(GetParam()));
  }
};

TEST_P(ArchitectureTest, SingleTokenDocumentAttendsFully) {
  const Model model = MakeModel();
  const ForwardTrace trace = Forward(model, Doc({{7}}));
  ASSERT_EQ(trace.final_seq_len, 1);
  EXPECT_EQ(trace.alpha[0], 1.0);
  EXPECT_EQ(trace.doc_vector, trace.final_inputs[0]);
}

TEST_P(ArchitectureTest, EvalModeIsDeterministic) {
  const Model model = MakeModel();
  const Document doc = Doc({{3, 4, 5}, {6, 2}, {9}});
  const ForwardTrace a = Forward(model, doc);
  const ForwardTrace b = Forward(model, doc);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(a.final_inputs, b.final_inputs);
}

TEST_P(ArchitectureTest, TraceReplaysExternally) {
  const Model model = MakeModel();
  const Document doc = Doc({{3, 4, 5}, {6, 2}, {9, 11, 12, 13}});
  const ForwardTrace t = Forward(model, doc);
  const size_t expected_len =
      model.config.arch == Architecture::kHan ? 3 : doc.num_tokens();
  EXPECT_EQ(t.final_seq_len, expected_len);
  EXPECT_EQ(t.alpha.size(), expected_len);
  const auto& w = model.params.classifier_w;
  std::vector<double> logits;
  for (size_t c = 0; c < w.rows(); ++c) {
    double x = model.params.classifier_b[c];
    for (size_t j = 0; j < w.cols(); ++j) {
      double v = 0.0;
      for (size_t i = 0; i < t.final_seq_len; ++i) {
        v += t.alpha[i] * t.final_inputs[i][j];
      }
      x += w(c, j) * v;
    }
    logits.push_back(x);
  }
  double total = 0.0;
  for (double x : logits) total += std::exp(x);
  for (size_t c = 0; c < logits.size(); ++c) {
    EXPECT_NEAR(t.output[c], std::exp(logits[c]) / total, 1e-12);
  }
  EXPECT_EQ(t.predicted, Argmax(t.output.values()));
}

TEST_P(ArchitectureTest, OutputFromOwnAlphaIsIdentity) {
  const Model model = MakeModel();
  const ForwardTrace t = Forward(model, Doc({{3, 4}, {6, 2, 8}}));
  const ProbDist p = OutputFromAlpha(model, t, t.alpha);
  for (size_t c = 0; c < p.size(); ++c) {
    EXPECT_NEAR(p[c], t.output[c], 1e-12);
  }
}

TEST_P(ArchitectureTest, ErasureReplayEqualsFullReforward) {
  const Model model = MakeModel();
  const Document doc = Doc({{3, 4}, {6, 2, 8}, {10, 11}});
  const ForwardTrace t = Forward(model, doc);
  for (size_t j = 0; j < t.final_seq_len; ++j) {
    const size_t zero[] = {j};
    const ProbDist replay = OutputFromAlpha(model, t, RenormalizeZeroed(t.alpha, zero));
    ForwardOptions options;
    options.final_alpha_override = [&](const ProbDist& alpha) {
      std::vector<double> w(alpha.values().begin(), alpha.values().end());
      w[j] = 0.0;
      double s = 0.0;
      for (double v : w) s += v;
      for (double& v : w) v /= s;
      return w;
    };
    const ForwardTrace full = Forward(model, doc, options);
    for (size_t c = 0; c < replay.size(); ++c) {
      EXPECT_NEAR(replay[c], full.output[c], 1e-10);
    }
  }
}

TEST_P(ArchitectureTest, ZeroVectorOutputIsSoftmaxOfBias) {
  Model model = MakeModel();
  model.params.classifier_b = Tensor::Vector({0.0, std::log(2.0), 0.0});
  const ProbDist p = OutputFromZeroVector(model);
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
  EXPECT_NEAR(p[2], 0.25, 1e-15);
}

TEST_P(ArchitectureTest, OutputFromAlphaLengthMismatchFails) {
  const Model model = MakeModel();
  const ForwardTrace t = Forward(model, Doc({{3, 4}, {5}}));
  EXPECT_THROW(OutputFromAlpha(model, t, ProbDist::Uniform(t.final_seq_len + 1)),
               Error);
}

TEST_P(ArchitectureTest, EmptyDocumentFails) {
  const Model model = MakeModel();
  EXPECT_THROW(Forward(model, Doc({})), Error);
}

TEST_P(ArchitectureTest, ZeroClassifierGivesZeroDecisionGradient) {
  Model model = MakeModel();
  model.params.classifier_w = Tensor(model.params.classifier_w.rows(),
                                     model.params.classifier_w.cols());
  const ForwardTrace t = Forward(model, Doc({{3, 4}, {5, 6}}));
  for (double g : GradDecisionWrtAlpha(model, t)) EXPECT_EQ(g, 0.0);
}

TEST_P(ArchitectureTest, SaveLoadRoundTripIsBitExact) {
  TempDir dir;
  const Model model = MakeModel();
  SaveModel(model, dir.path() / "m.json");
  const Model loaded = LoadModel(dir.path() / "m.json");
  EXPECT_EQ(FlattenParams(loaded.config, loaded.params),
            FlattenParams(model.config, model.params));
  const Document doc = Doc({{3, 4}, {6, 2, 8}});
  EXPECT_EQ(Forward(loaded, doc).output, Forward(model, doc).output);
  EXPECT_EQ(SerializeModel(loaded), SerializeModel(model));
}

TEST_P(ArchitectureTest, ReferenceLossAgreesWithTape) {
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    const ModelConfig config = RandomSmallConfig(std::get<0>(GetParam()),
                                                 std::get<1>(GetParam()), rng);
    const Model model = InitModel(config);
    const Document doc = RandomDocument(config, rng);
    const uint64_t seed = rng.NextU64();
    Rng dropout(seed);
    ForwardOptions options;
    options.mode = Mode::kTrain;
    options.rng = &dropout;
    const double tape_loss = ComputeLossAndGrad(model, doc, options).loss;
    EXPECT_NEAR(static_cast<double>(ReferenceLoss(model, doc, seed)),
                tape_loss, 1e-12);
  }
}

TEST_P(ArchitectureTest, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    const ModelConfig config = RandomSmallConfig(std::get<0>(GetParam()),
                                                 std::get<1>(GetParam()), rng);
    const Model model = InitModel(config);
    const Document doc = RandomDocument(config, rng);
    EXPECT_LE(CheckLossGradient(model, doc, rng.NextU64()).max_rel_error, 1e-4);
    EXPECT_LE(CheckDecisionGradient(model, doc).max_rel_error, 1e-4);
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllModels, ArchitectureTest,
    ::testing::Combine(::testing::ValuesIn(kArchs),
                       ::testing::ValuesIn(kEncoders)),
    [](const auto& info) {
      return ModelName(std::get<0>(info.param), std::get<1>(info.param));
    });

TEST(HanTest, NoEncSentencePermutationIsEquivariant) {
  const Model model = SmallModel(Architecture::kHan, EncoderKind::kNoEnc);
  const std::vector<std::vector<TokenId>> s = {{3, 4}, {5, 6, 7}, {8}, {9, 2}};
  const ForwardTrace base = Forward(model, Doc(s));
  const std::vector<size_t> perm = {2, 0, 3, 1};
  std::vector<std::vector<TokenId>> permuted;
  for (size_t k : perm) permuted.push_back(s[k]);
  const ForwardTrace moved = Forward(model, Doc(permuted));
  for (size_t i = 0; i < perm.size(); ++i) {
    EXPECT_NEAR(moved.alpha[i], base.alpha[perm[i]], 1e-14);
  }
  for (size_t c = 0; c < base.output.size(); ++c) {
    EXPECT_NEAR(moved.output[c], base.output[c], 1e-14);
  }
}

TEST(FlanTest, NoEncDocVectorIsConvexCombinationOfEmbeddings) {
  const Model model = SmallModel(Architecture::kFlan, EncoderKind::kNoEnc);
  const Document doc = Doc({{3, 4, 5}, {3, 9}});
  const ForwardTrace t = Forward(model, doc);
  std::vector<TokenId> flat;
  for (const auto& s : doc.sentences) flat.insert(flat.end(), s.begin(), s.end());
  double mass = 0.0;
  std::vector<double> expected(model.config.embed_dim, 0.0);
  for (size_t i = 0; i < flat.size(); ++i) {
    EXPECT_GE(t.alpha[i], 0.0);
    mass += t.alpha[i];
    for (size_t j = 0; j < expected.size(); ++j) {
      expected[j] += t.alpha[i] * model.params.embedding(flat[i], j);
    }
  }
  EXPECT_NEAR(mass, 1.0, 1e-12);
  for (size_t j = 0; j < expected.size(); ++j) {
    EXPECT_NEAR(t.doc_vector[j], expected[j], 1e-12);
  }
}

TEST(DecisionTest, Examples) {
  EXPECT_DOUBLE_EQ(DecisionConfidence(std::vector<double>{0.0, 0.0}), 0.5);
  EXPECT_NEAR(DecisionConfidence(std::vector<double>{std::log(3.0), 0.0}), 0.75,
              1e-15);
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(1 + rng.NextBelow(6));
    for (double& v : x) v = rng.Uniform(-20.0, 20.0);
    const ProbDist p = Softmax(x);
    EXPECT_NEAR(DecisionConfidence(x), p[Argmax(p.values())], 1e-15);
  }
  EXPECT_THROW(DecisionConfidence(std::vector<double>{}), Error);
}

TEST(DecisionTest, TwoClassOneHotClosedForm) {
  ModelConfig config;
  config.vocab_size = 3;
  config.embed_dim = 2;
  config.num_classes = 2;
  Model model = InitModel(config);
  model.params.classifier_w = Tensor::Matrix(2, 2, {1, 0, 0, 1});
  model.params.classifier_b = Tensor(2, 1);
  ForwardTrace trace;
  trace.final_inputs = {{1, 0}, {0, 1}, {1, 0}};
  trace.alpha = ProbDist::FromValues({0.5, 0.3, 0.2});
  trace.final_seq_len = 3;
  // x = (0.7, 0.3); d = sigmoid(0.4); dd/dx0 = -dd/dx1 = d (1 - d).
  const double d = 1.0 / (1.0 + std::exp(-0.4));
  const double s = d * (1.0 - d);
  const auto g = GradDecisionWrtAlpha(model, trace);
  ASSERT_EQ(g.size(), 3);
  EXPECT_NEAR(g[0], s, 1e-15);
  EXPECT_NEAR(g[1], -s, 1e-15);
  EXPECT_NEAR(g[2], s, 1e-15);
}

TEST(ModelIoTest, HandWrittenMinimalFileLoadsAndRuns) {
  const std::string text = R"({"format_version": 1,
    "config": {"arch": "FLAN", "encoder": "noenc", "vocab_size": 2,
               "embed_dim": 1, "enc_hidden_dim": 1, "att_dim": 1,
               "num_classes": 1, "dropout_pre_sentence_encoder": 0,
               "dropout_pre_document_encoder": 0, "dropout_classifier": 0,
               "seed": 1},
    "tensors": {"embedding": [[0.0], [2.5]],
                "word.attention.w": [[1.0]], "word.attention.b": [0.0],
                "word.attention.context": [1.0],
                "classifier.w": [[-3.0]], "classifier.b": [0.5]}})";
  const Model model = ParseModel(text);
  EXPECT_EQ(model.params.embedding(1, 0), 2.5);
  const ForwardTrace t = Forward(model, Doc({{1, 1}}));
  EXPECT_EQ(t.output.size(), 1);
  EXPECT_EQ(t.output[0], 1.0);
  EXPECT_NEAR(t.logits[0], -3.0 * 2.5 + 0.5, 1e-15);
}

TEST(ModelIoTest, Errors) {
  TempDir dir;
  const Model model = SmallModel(Architecture::kHan, EncoderKind::kRnn);
  const std::string text = SerializeModel(model);
  ExpectError([&] { ParseModel(text.substr(0, text.size() / 2)); },
              ErrorCode::kMalformedFile);
  ExpectError([] { ParseModel("{}"); }, ErrorCode::kMalformedFile);
  std::string v2 = text;
  v2.replace(v2.find("\"format_version\":1"), 18, "\"format_version\":2");
  ExpectError([&] { ParseModel(v2); }, ErrorCode::kVersionMismatch);
  std::string bad_shape = text;
  const size_t pos = bad_shape.find("\"classifier.b\":[");
  ASSERT_NE(pos, std::string::npos);
  bad_shape.insert(pos + 16, "0.0,");
  ExpectError([&] { ParseModel(bad_shape); }, ErrorCode::kShapeMismatch);
  ExpectError([&] { LoadModel(dir.path() / "missing.json"); }, ErrorCode::kIo);
  WriteFile(dir.path() / "trunc.json", text.substr(0, 100));
  ExpectError([&] { LoadModel(dir.path() / "trunc.json"); },
              ErrorCode::kMalformedFile);
}

}  // namespace
}  // namespace attnaudit
