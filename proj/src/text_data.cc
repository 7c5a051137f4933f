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

#include "attnaudit/text_data.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>

#include "attnaudit/error.h"
#include "attnaudit/numerics.h"
#include "fmt/format.h"
#include "json.hpp"

namespace attnaudit {

using nlohmann::json;

namespace {

bool IsSpace(char c) { return std::isspace(static_cast<unsigned char>(c)); }
bool IsPunct(char c) { return std::ispunct(static_cast<unsigned char>(c)); }
bool IsSentenceEnd(char c) { return c == '.' || c == '!' || c == '?'; }

std::vector<std::string> SplitTokens(std::string_view sentence) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < sentence.size()) {
    while (i < sentence.size() && IsSpace(sentence[i])) ++i;
    size_t end = i;
    while (end < sentence.size() && !IsSpace(sentence[end])) ++end;
    std::string_view chunk = sentence.substr(i, end - i);
    i = end;
    if (chunk.empty()) continue;

    size_t lead = 0;
    while (lead < chunk.size() && IsPunct(chunk[lead])) {
      tokens.emplace_back(1, chunk[lead]);
      ++lead;
    }
    chunk.remove_prefix(lead);
    size_t trail = chunk.size();
    while (trail > 0 && IsPunct(chunk[trail - 1])) --trail;
    if (trail > 0) tokens.emplace_back(chunk.substr(0, trail));
    for (size_t k = trail; k < chunk.size(); ++k) {
      tokens.emplace_back(1, chunk[k]);
    }
  }
  return tokens;
}

}  // namespace

size_t Document::num_tokens() const {
  size_t total = 0;
  for (const auto& s : sentences) total += s.size();
  return total;
}

Sentences Tokenize(std::string_view text) {
  std::string lowered(text);
  for (char& c : lowered) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  // Boundaries are found on the token stream rather than the raw text, so a
  // run such as "?!" splits the same way as its spaced form "? !".
  const std::vector<std::string> tokens = SplitTokens(lowered);
  const auto is_end = [](const std::string& t) {
    return t.size() == 1 && IsSentenceEnd(t[0]);
  };
  const auto is_closer = [](const std::string& t) {
    return t.size() == 1 && std::string_view(")]}\"'").find(t[0]) !=
                                std::string_view::npos;
  };
  Sentences sentences;
  std::vector<std::string> current;
  size_t i = 0;
  while (i < tokens.size()) {
    current.push_back(tokens[i]);
    if (!is_end(tokens[i++])) continue;
    while (i < tokens.size() && is_end(tokens[i])) current.push_back(tokens[i++]);
    while (i < tokens.size() && is_closer(tokens[i])) {
      current.push_back(tokens[i++]);
    }
    sentences.push_back(std::move(current));
    current.clear();
  }
  if (!current.empty()) sentences.push_back(std::move(current));
  if (sentences.empty()) {
    throw Error(ErrorCode::kData, "empty-document: text has no tokens");
  }
  return sentences;
}

std::string Detokenize(const Sentences& sentences) {
  std::string out;
  for (const auto& sentence : sentences) {
    for (const auto& token : sentence) {
      if (!out.empty()) out += ' ';
      out += token;
    }
  }
  return out;
}

Vocab::Vocab() {
  id_to_token_ = {kPadToken, kUnkToken};
  token_to_id_ = {{kPadToken, kPad}, {kUnkToken, kUnk}};
}

void Vocab::Add(const std::string& token) {
  if (token_to_id_.contains(token)) {
    throw Error(ErrorCode::kData, fmt::format("vocab: duplicate token '{}'",
                                              token));
  }
  token_to_id_.emplace(token, static_cast<TokenId>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocab Vocab::Build(const std::vector<RawDocument>& corpus, uint32_t min_count,
                   uint32_t max_size) {
  std::map<std::string, uint64_t> counts;
  for (const auto& doc : corpus) {
    for (const auto& sentence : doc.sentences) {
      for (const auto& token : sentence) ++counts[token];
    }
  }
  std::vector<std::pair<std::string, uint64_t>> ranked;
  for (auto& [token, count] : counts) {
    if (count >= min_count) ranked.emplace_back(token, count);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (max_size > 0 && ranked.size() > max_size) ranked.resize(max_size);
  Vocab vocab;
  for (const auto& [token, count] : ranked) vocab.Add(token);
  return vocab;
}

Vocab Vocab::FromTokens(const std::vector<std::string>& tokens) {
  Vocab vocab;
  for (const auto& token : tokens) vocab.Add(token);
  return vocab;
}

TokenId Vocab::Lookup(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

Document Vocab::Encode(const RawDocument& raw) const {
  Document doc;
  doc.label = raw.label;
  doc.doc_id = raw.doc_id;
  for (const auto& sentence : raw.sentences) {
    if (sentence.empty()) continue;
    std::vector<TokenId> ids;
    ids.reserve(sentence.size());
    for (const auto& token : sentence) ids.push_back(Lookup(token));
    doc.sentences.push_back(std::move(ids));
  }
  if (doc.sentences.empty()) {
    throw Error(ErrorCode::kData,
                fmt::format("empty-document: doc_id {}", raw.doc_id));
  }
  return doc;
}

std::vector<Document> Vocab::Encode(const std::vector<RawDocument>& raw) const {
  std::vector<Document> docs;
  docs.reserve(raw.size());
  for (const auto& r : raw) docs.push_back(Encode(r));
  return docs;
}

void Vocab::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  }
  json doc;
  doc["tokens"] = std::vector<std::string>(id_to_token_.begin() + 2,
                                           id_to_token_.end());
  out << doc.dump() << '\n';
}

Vocab Vocab::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, fmt::format("cannot read {}", path.string()));
  }
  try {
    const json doc = json::parse(in);
    return FromTokens(doc.at("tokens").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedFile,
                fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<RawDocument> LoadJsonl(const std::filesystem::path& path,
                                   uint32_t num_classes) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kData, fmt::format("cannot read {}", path.string()));
  }
  std::vector<RawDocument> docs;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (std::all_of(line.begin(), line.end(), IsSpace)) continue;
    const auto fail = [&](const std::string& why) {
      return Error(ErrorCode::kData, fmt::format("{}:{}: {}", path.string(),
                                                 line_number, why));
    };
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw fail(fmt::format("malformed JSON ({})", e.what()));
    }
    if (!obj.is_object()) throw fail("expected a JSON object");
    if (!obj.contains("text") || !obj["text"].is_string()) {
      throw fail("missing string field \"text\"");
    }
    if (!obj.contains("label") || !obj["label"].is_number_integer()) {
      throw fail("missing integer field \"label\"");
    }
    const int64_t label = obj["label"].get<int64_t>();
    if (label < 0 || label >= static_cast<int64_t>(num_classes)) {
      throw fail(fmt::format("label {} out of range [0, {})", label,
                             num_classes));
    }
    RawDocument doc;
    doc.label = static_cast<uint32_t>(label);
    doc.doc_id = line_number - 1;
    if (obj.contains("doc_id")) {
      if (!obj["doc_id"].is_number_unsigned()) {
        throw fail("\"doc_id\" must be a non-negative integer");
      }
      doc.doc_id = obj["doc_id"].get<uint64_t>();
    }
    try {
      doc.sentences = Tokenize(obj["text"].get<std::string>());
    } catch (const Error& e) {
      throw fail(e.what());
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

void WriteJsonl(const std::filesystem::path& path,
                const std::vector<RawDocument>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  }
  for (const auto& doc : docs) {
    json obj = json::object();
    obj["doc_id"] = doc.doc_id;
    obj["label"] = doc.label;
    obj["text"] = Detokenize(doc.sentences);
    out << obj.dump() << '\n';
  }
}

uint32_t SignalTokensPerClass(const SyntheticSpec& spec) {
  return std::max<uint32_t>(1, spec.vocab_size / (4 * spec.num_classes));
}

std::string SignalToken(uint32_t label, uint32_t index) {
  return fmt::format("sig{}x{}", label, index);
}

std::string DistractorToken(uint32_t index) {
  return fmt::format("w{}", index);
}

int SignalTokenClass(std::string_view token) {
  if (!token.starts_with("sig")) return -1;
  token.remove_prefix(3);
  int label = -1;
  const auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), label);
  if (ec != std::errc() || ptr == token.data() + token.size() || *ptr != 'x') {
    return -1;
  }
  return label;
}

namespace {

void ValidateSpec(const SyntheticSpec& spec) {
  const auto bad = [](const std::string& why) {
    return Error(ErrorCode::kConfig, "synthetic spec: " + why);
  };
  if (spec.num_classes == 0) throw bad("num_classes must be > 0");
  if (spec.vocab_size < spec.num_classes * 2) {
    throw Error(ErrorCode::kConfig,
                fmt::format("vocab-too-small: vocab_size {} < 2 * {} classes",
                            spec.vocab_size, spec.num_classes));
  }
  if (spec.min_sentences == 0 || spec.min_sentences > spec.max_sentences) {
    throw bad("sentence-count range is empty");
  }
  if (spec.min_sentence_length == 0 ||
      spec.min_sentence_length > spec.max_sentence_length) {
    throw bad("sentence-length range is empty");
  }
  if (!(spec.signal_strength > 0.0 && spec.signal_strength <= 1.0)) {
    throw bad("signal_strength must be in (0, 1]");
  }
}

uint32_t UniformIn(Rng& rng, uint32_t lo, uint32_t hi) {
  return lo + static_cast<uint32_t>(rng.NextBelow(hi - lo + 1));
}

RawDocument GenerateDocument(const SyntheticSpec& spec, uint32_t per_class,
                             uint32_t num_distractors, uint64_t doc_id,
                             Rng& rng) {
  RawDocument doc;
  doc.doc_id = doc_id;
  doc.label = static_cast<uint32_t>(rng.NextBelow(spec.num_classes));
  const uint32_t num_sentences =
      UniformIn(rng, spec.min_sentences, spec.max_sentences);
  for (uint32_t s = 0; s < num_sentences; ++s) {
    const uint32_t length =
        UniformIn(rng, spec.min_sentence_length, spec.max_sentence_length);
    std::vector<std::string> sentence;
    for (uint32_t w = 0; w < length; ++w) {
      sentence.push_back(DistractorToken(
          static_cast<uint32_t>(rng.NextBelow(num_distractors))));
    }
    sentence.emplace_back(".");
    doc.sentences.push_back(std::move(sentence));
  }
  if (!rng.Bernoulli(spec.signal_strength)) return doc;

  const auto plant = [&](std::vector<std::string>& sentence) {
    // The trailing "." is never replaced.
    const size_t pos = rng.NextBelow(sentence.size() - 1);
    sentence[pos] = SignalToken(
        doc.label, static_cast<uint32_t>(rng.NextBelow(per_class)));
  };
  if (spec.signal_mode == SignalMode::kPlantedSingle) {
    size_t words = 0;
    for (const auto& s : doc.sentences) words += s.size() - 1;
    size_t target = rng.NextBelow(words);
    for (auto& s : doc.sentences) {
      if (target < s.size() - 1) {
        s[target] = SignalToken(
            doc.label, static_cast<uint32_t>(rng.NextBelow(per_class)));
        break;
      }
      target -= s.size() - 1;
    }
  } else {
    std::vector<size_t> selected;
    for (size_t s = 0; s < doc.sentences.size(); ++s) {
      if (rng.Bernoulli(0.5)) selected.push_back(s);
    }
    if (selected.empty()) selected.push_back(rng.NextBelow(num_sentences));
    for (size_t s : selected) plant(doc.sentences[s]);
  }
  return doc;
}

}  // namespace

CorpusSplits GenerateSynthetic(const SyntheticSpec& spec) {
  ValidateSpec(spec);
  const uint32_t per_class = SignalTokensPerClass(spec);
  const uint32_t num_distractors = spec.vocab_size - per_class * spec.num_classes;
  Rng rng(spec.seed);
  CorpusSplits splits;
  uint64_t next_id = 0;
  const auto fill = [&](std::vector<RawDocument>& out, uint32_t count) {
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
      out.push_back(
          GenerateDocument(spec, per_class, num_distractors, next_id++, rng));
    }
  };
  fill(splits.train, spec.train_docs);
  fill(splits.dev, spec.dev_docs);
  fill(splits.test, spec.test_docs);
  return splits;
}

}  // namespace attnaudit
