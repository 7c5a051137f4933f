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

#ifndef ATTNAUDIT_TEXT_DATA_H_
#define ATTNAUDIT_TEXT_DATA_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace attnaudit {

using TokenId = uint32_t;
using Sentences = std::vector<std::vector<std::string>>;

// A tokenized, not yet indexed document.
struct RawDocument {
  Sentences sentences;
  uint32_t label = 0;
  uint64_t doc_id = 0;
};

// An indexed document: at least one sentence, every sentence non-empty.
struct Document {
  std::vector<std::vector<TokenId>> sentences;
  uint32_t label = 0;
  uint64_t doc_id = 0;

  size_t num_tokens() const;
};

struct CorpusSplits {
  std::vector<RawDocument> train;
  std::vector<RawDocument> dev;
  std::vector<RawDocument> test;
};

// Lowercases ASCII letters, ends a sentence after any of ".!?" that is
// followed by whitespace (or the end of the text), splits tokens on
// whitespace and peels leading/trailing ASCII punctuation off each chunk as
// single-character tokens. Throws kData "empty-document" if nothing remains.
Sentences Tokenize(std::string_view text);

// Inverse used for writing corpora: tokens joined by single spaces.
std::string Detokenize(const Sentences& sentences);

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocab();

  // Tokens seen at least `min_count` times, most frequent first with
  // lexicographic tie-breaks, at most `max_size` regular entries.
  static Vocab Build(const std::vector<RawDocument>& corpus, uint32_t min_count,
                     uint32_t max_size);
  // Regular tokens in id order (ids 2, 3, ...).
  static Vocab FromTokens(const std::vector<std::string>& tokens);

  TokenId Lookup(std::string_view token) const;
  const std::string& Token(TokenId id) const { return id_to_token_.at(id); }
  // Including the two special ids.
  size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  Document Encode(const RawDocument& raw) const;
  std::vector<Document> Encode(const std::vector<RawDocument>& raw) const;

  void Save(const std::filesystem::path& path) const;
  static Vocab Load(const std::filesystem::path& path);

 private:
  void Add(const std::string& token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

// Reads lines of {"text": string, "label": int[, "doc_id": int]}. Blank lines
// are skipped; doc_id defaults to the 0-based line number. Labels must be
// < num_classes.
std::vector<RawDocument> LoadJsonl(const std::filesystem::path& path,
                                   uint32_t num_classes);
void WriteJsonl(const std::filesystem::path& path,
                const std::vector<RawDocument>& docs);

enum class SignalMode { kPlantedSingle, kDistributed };

struct SyntheticSpec {
  uint32_t num_classes = 5;
  // Number of distinct word types (signal + distractor).
  uint32_t vocab_size = 200;
  uint32_t train_docs = 1000;
  uint32_t dev_docs = 200;
  uint32_t test_docs = 200;
  uint32_t min_sentences = 1;
  uint32_t max_sentences = 4;
  uint32_t min_sentence_length = 3;
  uint32_t max_sentence_length = 8;
  SignalMode signal_mode = SignalMode::kPlantedSingle;
  double signal_strength = 1.0;
  uint64_t seed = 1;
};

// Signal tokens per class: max(1, vocab_size / (4 * num_classes)); the rest
// of the word types are distractors.
uint32_t SignalTokensPerClass(const SyntheticSpec& spec);
std::string SignalToken(uint32_t label, uint32_t index);
std::string DistractorToken(uint32_t index);
// Class owning a signal token, or -1 for any other token.
int SignalTokenClass(std::string_view token);

// Every sentence is a run of distractor words followed by ".". A document is
// a signal document with probability signal_strength; otherwise its label is
// still uniform but no signal token is planted. Planted-single mode replaces
// one word of the document with a signal token of its class. Distributed mode
// selects each sentence with probability 1/2 (falling back to one uniformly
// chosen sentence when none is selected) and replaces one word in every
// selected sentence. doc_ids run consecutively over train, dev, test.
CorpusSplits GenerateSynthetic(const SyntheticSpec& spec);

}  // namespace attnaudit

#endif  // ATTNAUDIT_TEXT_DATA_H_
