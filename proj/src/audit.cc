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
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "attnaudit/error.h"
#include "fmt/format.h"
#include "json.hpp"

namespace attnaudit {

using nlohmann::ordered_json;

const char* RankingSchemeName(RankingScheme scheme) {
  switch (scheme) {
    case RankingScheme::kAttention:
      return "attention";
    case RankingScheme::kGradient:
      return "gradient";
    case RankingScheme::kProduct:
      return "product";
    case RankingScheme::kRandom:
      return "random";
  }
  return "unknown";
}

RankingScheme ParseRankingScheme(std::string_view name) {
  for (RankingScheme s : kAllSchemes) {
    if (name == RankingSchemeName(s)) return s;
  }
  throw Error(ErrorCode::kMalformedFile,
              fmt::format("unknown ranking scheme '{}'", name));
}

const char* ExclusionReasonName(ExclusionReason reason) {
  return reason == ExclusionReason::kLengthOne ? "length-one" : "never-flips";
}

namespace {

std::vector<size_t> DescendingOrder(std::span<const double> keys) {
  std::vector<size_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return keys[a] > keys[b]; });
  return order;
}

bool Flips(const ProbDist& q, const ForwardTrace& trace) {
  return Argmax(q.values()) != trace.predicted;
}

}  // namespace

Ranking RankItems(RankingScheme scheme, const ForwardTrace& trace,
                  std::span<const double> grads, Rng* rng, bool abs_gradient) {
  const size_t n = trace.final_seq_len;
  Ranking ranking;
  ranking.scheme = scheme;
  if (scheme != RankingScheme::kAttention && scheme != RankingScheme::kRandom &&
      grads.size() != n) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("rank_items: {} gradients for {} items",
                            grads.size(), n));
  }
  std::vector<double> keys(n);
  switch (scheme) {
    case RankingScheme::kAttention:
      ranking.order = DescendingOrder(trace.alpha.values());
      return ranking;
    case RankingScheme::kGradient:
      for (size_t i = 0; i < n; ++i) {
        keys[i] = abs_gradient ? std::abs(grads[i]) : grads[i];
      }
      break;
    case RankingScheme::kProduct:
      for (size_t i = 0; i < n; ++i) {
        const double g = abs_gradient ? std::abs(grads[i]) : grads[i];
        keys[i] = trace.alpha[i] * g;
      }
      break;
    case RankingScheme::kRandom:
      if (rng == nullptr) {
        throw Error(ErrorCode::kInvalidArgument,
                    "rank_items: random ranking requires an rng");
      }
      ranking.order = rng->Permutation(n);
      return ranking;
  }
  ranking.order = DescendingOrder(keys);
  return ranking;
}

ProbDist ErasedOutput(const Model& model, const ForwardTrace& trace,
                      std::span<const size_t> zero_set) {
  std::vector<char> zeroed(trace.final_seq_len, 0);
  for (size_t i : zero_set) zeroed.at(i) = 1;
  double surviving = 0.0;
  for (size_t i = 0; i < zeroed.size(); ++i) {
    if (!zeroed[i]) surviving += trace.alpha[i];
  }
  // Survivors whose weights underflowed to zero contribute nothing, exactly
  // as the zero-vector terminal.
  if (surviving < 1e-300) return OutputFromZeroVector(model);
  return OutputFromAlpha(model, trace, RenormalizeZeroed(trace.alpha, zero_set));
}

double DeltaJs(const Model& model, const ForwardTrace& trace, size_t i_star,
               size_t r) {
  if (trace.final_seq_len < 2) {
    throw Error(ErrorCode::kInvalidArgument, "length-one: cannot compare items");
  }
  if (i_star == r || i_star >= trace.final_seq_len ||
      r >= trace.final_seq_len) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("delta_js: bad indices i*={} r={} (n={})", i_star,
                            r, trace.final_seq_len));
  }
  const size_t star_set[] = {i_star};
  const size_t r_set[] = {r};
  return JsDivergence(trace.output, ErasedOutput(model, trace, star_set)) -
         JsDivergence(trace.output, ErasedOutput(model, trace, r_set));
}

SingleWeightOutcome SingleWeightTest(const Model& model,
                                     const ForwardTrace& trace,
                                     RankingScheme target,
                                     std::span<const double> grads, Rng& rng,
                                     bool abs_gradient) {
  const size_t n = trace.final_seq_len;
  if (n < 2) {
    throw Error(ErrorCode::kInvalidArgument, "length-one: single-weight test");
  }
  if (target == RankingScheme::kRandom) {
    throw Error(ErrorCode::kInvalidArgument,
                "single-weight test target cannot be random");
  }
  SingleWeightOutcome out;
  out.target = target;
  out.i_star = RankItems(target, trace, grads, nullptr, abs_gradient).order[0];
  const size_t draw = rng.NextBelow(n - 1);
  out.r = draw < out.i_star ? draw : draw + 1;
  out.delta_alpha = trace.alpha[out.i_star] - trace.alpha[out.r];
  const size_t star_set[] = {out.i_star};
  const size_t r_set[] = {out.r};
  const ProbDist q_star = ErasedOutput(model, trace, star_set);
  const ProbDist q_r = ErasedOutput(model, trace, r_set);
  out.delta_js =
      JsDivergence(trace.output, q_star) - JsDivergence(trace.output, q_r);
  out.flip_star = Flips(q_star, trace);
  out.flip_r = Flips(q_r, trace);
  return out;
}

SingleWeightOutcome SingleWeightTest(const Model& model,
                                     const ForwardTrace& trace,
                                     RankingScheme target, Rng& rng,
                                     bool abs_gradient) {
  std::vector<double> grads;
  if (target != RankingScheme::kAttention) {
    grads = GradDecisionWrtAlpha(model, trace);
  }
  return SingleWeightTest(model, trace, target, grads, rng, abs_gradient);
}

RemovalOutcome RemovalCurve(const Model& model, const ForwardTrace& trace,
                            const Ranking& ranking) {
  const size_t n = trace.final_seq_len;
  if (ranking.order.size() != n) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("removal_curve: ranking of {} for {} items",
                            ranking.order.size(), n));
  }
  RemovalOutcome out;
  out.scheme = ranking.scheme;
  double mass = 0.0;
  for (size_t k = 1; k < n; ++k) {
    mass += trace.alpha[ranking.order[k - 1]];
    const ProbDist q = ErasedOutput(
        model, trace, std::span<const size_t>(ranking.order).first(k));
    if (Flips(q, trace)) {
      out.removed_count = static_cast<uint32_t>(k);
      out.fraction_removed = static_cast<double>(k) / static_cast<double>(n);
      out.prob_mass_zeroed = std::min(mass, 1.0);
      out.flipped = true;
      return out;
    }
  }
  out.removed_count = static_cast<uint32_t>(n);
  out.fraction_removed = 1.0;
  // The terminal step erases whatever mass remained, so the total is 1.
  out.prob_mass_zeroed = 1.0;
  out.used_zero_vector_terminal = true;
  out.flipped = Flips(OutputFromZeroVector(model), trace);
  return out;
}

std::optional<size_t> BruteForceMinFlip(const Model& model,
                                        const ForwardTrace& trace,
                                        uint32_t cap) {
  const size_t n = trace.final_seq_len;
  if (n > cap) {
    throw Error(ErrorCode::kOracleCap,
                fmt::format("oracle-cap: sequence length {} exceeds cap {}", n,
                            cap));
  }
  std::vector<size_t> subset;
  for (size_t k = 1; k < n; ++k) {
    // Lexicographic enumeration of k-subsets of {0..n-1}.
    subset.resize(k);
    std::iota(subset.begin(), subset.end(), 0);
    while (true) {
      if (Flips(ErasedOutput(model, trace, subset), trace)) return k;
      size_t pos = k;
      while (pos > 0 && subset[pos - 1] == n - k + pos - 1) --pos;
      if (pos == 0) break;
      ++subset[pos - 1];
      for (size_t j = pos; j < k; ++j) subset[j] = subset[j - 1] + 1;
    }
  }
  if (Flips(OutputFromZeroVector(model), trace)) return n;
  return std::nullopt;
}

AuditRecord AuditDocument(const Model& model, const Document& doc,
                          const AuditOptions& options) {
  const ForwardTrace trace = Forward(model, doc);
  AuditRecord record;
  record.doc_id = doc.doc_id;
  record.final_seq_len = trace.final_seq_len;
  if (trace.final_seq_len < 2) {
    record.excluded = ExclusionReason::kLengthOne;
    return record;
  }
  Rng rng(MixSeeds(options.seed, doc.doc_id));
  const std::vector<double> grads = GradDecisionWrtAlpha(model, trace);
  bool any_flip = false;
  for (RankingScheme scheme : kAllSchemes) {
    const Ranking ranking =
        RankItems(scheme, trace, grads, &rng, options.abs_gradient);
    record.removal.push_back(RemovalCurve(model, trace, ranking));
    any_flip = any_flip || record.removal.back().flipped;
  }
  if (!any_flip) {
    record.removal.clear();
    record.excluded = ExclusionReason::kNeverFlips;
    return record;
  }
  for (RankingScheme target : kTargetSchemes) {
    record.single_weight.push_back(
        SingleWeightTest(model, trace, target, grads, rng, options.abs_gradient));
  }
  if (options.oracle_cap > 0 && trace.final_seq_len <= options.oracle_cap) {
    record.oracle_min_flip = BruteForceMinFlip(model, trace, options.oracle_cap);
  }
  return record;
}

std::vector<AuditRecord> AuditCorpus(const Model& model,
                                     std::span<const Document> corpus,
                                     const AuditOptions& options) {
  std::vector<AuditRecord> records(corpus.size());
  const size_t workers =
      std::max<size_t>(1, std::min<size_t>(options.workers, corpus.size()));
  if (workers == 1) {
    for (size_t i = 0; i < corpus.size(); ++i) {
      records[i] = AuditDocument(model, corpus[i], options);
    }
  } else {
    std::vector<std::exception_ptr> failures(workers);
    std::vector<std::thread> threads;
    for (size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (size_t i = w; i < corpus.size(); i += workers) {
            records[i] = AuditDocument(model, corpus[i], options);
          }
        } catch (...) {
          failures[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const AuditRecord& a, const AuditRecord& b) {
                     return a.doc_id < b.doc_id;
                   });
  return records;
}

std::string AuditRecordToJson(const AuditRecord& record) {
  ordered_json obj;
  obj["doc_id"] = record.doc_id;
  obj["final_seq_len"] = record.final_seq_len;
  obj["excluded"] = record.excluded
                        ? ordered_json(ExclusionReasonName(*record.excluded))
                        : ordered_json(nullptr);
  ordered_json single = ordered_json::object();
  for (const auto& s : record.single_weight) {
    ordered_json o;
    o["i_star"] = s.i_star;
    o["r"] = s.r;
    o["delta_alpha"] = s.delta_alpha;
    o["delta_js"] = s.delta_js;
    o["flip_star"] = s.flip_star;
    o["flip_r"] = s.flip_r;
    single[RankingSchemeName(s.target)] = std::move(o);
  }
  obj["single_weight"] = std::move(single);
  ordered_json removal = ordered_json::object();
  for (const auto& r : record.removal) {
    ordered_json o;
    o["removed_count"] = r.removed_count;
    o["fraction_removed"] = r.fraction_removed;
    o["prob_mass_zeroed"] = r.prob_mass_zeroed;
    o["flipped"] = r.flipped;
    o["zero_vector_terminal"] = r.used_zero_vector_terminal;
    removal[RankingSchemeName(r.scheme)] = std::move(o);
  }
  obj["removal"] = std::move(removal);
  obj["oracle_min_flip"] = record.oracle_min_flip
                               ? ordered_json(*record.oracle_min_flip)
                               : ordered_json(nullptr);
  return obj.dump();
}

AuditRecord AuditRecordFromJson(std::string_view line) {
  try {
    const ordered_json obj = ordered_json::parse(line);
    AuditRecord record;
    record.doc_id = obj.at("doc_id").get<uint64_t>();
    record.final_seq_len = obj.at("final_seq_len").get<size_t>();
    const auto& excluded = obj.at("excluded");
    if (!excluded.is_null()) {
      const auto name = excluded.get<std::string>();
      if (name == "length-one") {
        record.excluded = ExclusionReason::kLengthOne;
      } else if (name == "never-flips") {
        record.excluded = ExclusionReason::kNeverFlips;
      } else {
        throw Error(ErrorCode::kMalformedFile,
                    fmt::format("unknown exclusion '{}'", name));
      }
    }
    for (const auto& [name, o] : obj.at("single_weight").items()) {
      SingleWeightOutcome s;
      s.target = ParseRankingScheme(name);
      s.i_star = o.at("i_star").get<size_t>();
      s.r = o.at("r").get<size_t>();
      s.delta_alpha = o.at("delta_alpha").get<double>();
      s.delta_js = o.at("delta_js").get<double>();
      s.flip_star = o.at("flip_star").get<bool>();
      s.flip_r = o.at("flip_r").get<bool>();
      record.single_weight.push_back(s);
    }
    for (const auto& [name, o] : obj.at("removal").items()) {
      RemovalOutcome r;
      r.scheme = ParseRankingScheme(name);
      r.removed_count = o.at("removed_count").get<uint32_t>();
      r.fraction_removed = o.at("fraction_removed").get<double>();
      r.prob_mass_zeroed = o.at("prob_mass_zeroed").get<double>();
      r.flipped = o.at("flipped").get<bool>();
      r.used_zero_vector_terminal = o.at("zero_vector_terminal").get<bool>();
      record.removal.push_back(r);
    }
    if (obj.contains("oracle_min_flip") && !obj["oracle_min_flip"].is_null()) {
      record.oracle_min_flip = obj["oracle_min_flip"].get<size_t>();
    }
    return record;
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::kMalformedFile,
                fmt::format("audit record: {}", e.what()));
  }
}

void WriteAuditJsonl(const std::filesystem::path& path,
                     std::span<const AuditRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  }
  for (const auto& record : records) out << AuditRecordToJson(record) << '\n';
}

std::vector<AuditRecord> ReadAuditJsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kData, fmt::format("cannot read {}", path.string()));
  }
  std::vector<AuditRecord> records;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      records.push_back(AuditRecordFromJson(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::kData, fmt::format("{}:{}: {}", path.string(),
                                                line_number, e.what()));
    }
  }
  return records;
}

}  // namespace attnaudit
