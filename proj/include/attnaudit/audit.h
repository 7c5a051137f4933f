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

#ifndef ATTNAUDIT_AUDIT_H_
#define ATTNAUDIT_AUDIT_H_

// Erasure tests on the final attention layer of a trained model.
//
// Erasing a set of attended items zeroes their attention weights,
// renormalizes the survivors and re-runs only the classifier on the trace's
// final-layer inputs. When every item is erased the attention output is
// replaced by the zero vector.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnaudit/models.h"
#include "attnaudit/numerics.h"

namespace attnaudit {

enum class RankingScheme { kAttention, kGradient, kProduct, kRandom };

inline constexpr std::array<RankingScheme, 4> kAllSchemes = {
    RankingScheme::kAttention, RankingScheme::kGradient,
    RankingScheme::kProduct, RankingScheme::kRandom};
// Schemes that nominate the single item for the single-weight tests.
inline constexpr std::array<RankingScheme, 3> kTargetSchemes = {
    RankingScheme::kAttention, RankingScheme::kGradient,
    RankingScheme::kProduct};

const char* RankingSchemeName(RankingScheme scheme);
RankingScheme ParseRankingScheme(std::string_view name);

struct Ranking {
  RankingScheme scheme = RankingScheme::kAttention;
  std::vector<size_t> order;
};

// Orders items most-important first: attention by alpha, gradient by signed
// dd/dalpha (|dd/dalpha| when abs_gradient), product by alpha * dd/dalpha,
// all descending with ties to the lower index; random is rng->Permutation.
Ranking RankItems(RankingScheme scheme, const ForwardTrace& trace,
                  std::span<const double> grads, Rng* rng,
                  bool abs_gradient = false);

// Output distribution after erasing `zero_set` (all items -> zero vector).
ProbDist ErasedOutput(const Model& model, const ForwardTrace& trace,
                      std::span<const size_t> zero_set);

// JS(p, q_{i_star}) - JS(p, q_r). Throws "length-one" for a single item.
double DeltaJs(const Model& model, const ForwardTrace& trace, size_t i_star,
               size_t r);

struct SingleWeightOutcome {
  RankingScheme target = RankingScheme::kAttention;
  size_t i_star = 0;
  size_t r = 0;
  double delta_alpha = 0.0;
  double delta_js = 0.0;
  bool flip_star = false;
  bool flip_r = false;

  bool operator==(const SingleWeightOutcome&) const = default;
};

// i_star is the top item of the target's ranking; r is uniform over the other
// items. Requires final_seq_len >= 2.
SingleWeightOutcome SingleWeightTest(const Model& model,
                                     const ForwardTrace& trace,
                                     RankingScheme target,
                                     std::span<const double> grads, Rng& rng,
                                     bool abs_gradient = false);
// Computes the decision gradient itself.
SingleWeightOutcome SingleWeightTest(const Model& model,
                                     const ForwardTrace& trace,
                                     RankingScheme target, Rng& rng,
                                     bool abs_gradient = false);

struct RemovalOutcome {
  RankingScheme scheme = RankingScheme::kAttention;
  // Items erased when the decision first flipped, or n if it never did.
  uint32_t removed_count = 0;
  double fraction_removed = 0.0;
  // Sum of the original alpha over the erased items.
  double prob_mass_zeroed = 0.0;
  bool flipped = false;
  bool used_zero_vector_terminal = false;

  bool operator==(const RemovalOutcome&) const = default;
};

// Erases the top-k items for k = 1 .. n-1, then the zero vector at k = n,
// stopping at the first decision flip.
RemovalOutcome RemovalCurve(const Model& model, const ForwardTrace& trace,
                            const Ranking& ranking);

inline constexpr uint32_t kDefaultOracleCap = 15;

// Size of the smallest non-empty subset whose erasure flips the decision
// (size n meaning the zero vector), or nullopt if none does. Exhaustive;
// throws "oracle-cap" when final_seq_len > cap.
std::optional<size_t> BruteForceMinFlip(const Model& model,
                                        const ForwardTrace& trace,
                                        uint32_t cap = kDefaultOracleCap);

enum class ExclusionReason { kLengthOne, kNeverFlips };
const char* ExclusionReasonName(ExclusionReason reason);

struct AuditRecord {
  uint64_t doc_id = 0;
  size_t final_seq_len = 0;
  std::optional<ExclusionReason> excluded;
  // In kTargetSchemes order; empty when excluded.
  std::vector<SingleWeightOutcome> single_weight;
  // In kAllSchemes order; empty when excluded.
  std::vector<RemovalOutcome> removal;
  // Brute-force minimal flip size when final_seq_len <= the oracle cap.
  std::optional<size_t> oracle_min_flip;

  bool operator==(const AuditRecord&) const = default;
};

struct AuditOptions {
  uint64_t seed = 0;
  uint32_t workers = 1;
  bool abs_gradient = false;
  // 0 disables the brute-force oracle.
  uint32_t oracle_cap = kDefaultOracleCap;
};

// Per-instance randomness comes from Rng(MixSeeds(seed, doc_id)): first the
// random ranking's permutation, then r for each target in kTargetSchemes
// order.
AuditRecord AuditDocument(const Model& model, const Document& doc,
                          const AuditOptions& options);

// Records sorted by doc_id; identical for any worker count or corpus order.
std::vector<AuditRecord> AuditCorpus(const Model& model,
                                     std::span<const Document> corpus,
                                     const AuditOptions& options);

std::string AuditRecordToJson(const AuditRecord& record);
AuditRecord AuditRecordFromJson(std::string_view line);
void WriteAuditJsonl(const std::filesystem::path& path,
                     std::span<const AuditRecord> records);
std::vector<AuditRecord> ReadAuditJsonl(const std::filesystem::path& path);

}  // namespace attnaudit

#endif  // ATTNAUDIT_AUDIT_H_
