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


#ifndef ATTNAUDIT_REPORT_H_
#define ATTNAUDIT_REPORT_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnaudit/audit.h"
#include "attnaudit/numerics.h"

namespace attnaudit {

// Percentages of included instances by whether erasing the top item (rows)
// and a random other item (columns) flipped the decision.
struct ContingencyTable {
  double star_yes_rand_yes = 0.0;
  double star_yes_rand_no = 0.0;
  double star_no_rand_yes = 0.0;
  double star_no_rand_no = 0.0;
  size_t instances = 0;

  double Total() const {
    return star_yes_rand_yes + star_yes_rand_no + star_no_rand_yes +
           star_no_rand_no;
  }
};

ContingencyTable ContingencyFromCounts(size_t yes_yes, size_t yes_no,
                                       size_t no_yes, size_t no_no);

// Renders the 2x2 grid with one decimal per cell and the cell total, e.g.
//
//                  random: yes   random: no
//   top: yes               0.5          8.7
//   top: no                1.3         89.6
//   total 100.1% of 1234 instances
std::string FormatContingency(const ContingencyTable& table,
                              std::string_view top_label = "top");

struct SchemeStats {
  RankingScheme scheme = RankingScheme::kAttention;
  // Over curves that flipped (including at the zero-vector terminal).
  size_t flipped = 0;
  // One entry per flipped curve, sorted by doc_id.
  std::vector<uint64_t> doc_ids;
  std::vector<double> fraction_removed;
  std::vector<double> prob_mass_zeroed;
  BoxStats fraction_box;
  BoxStats mass_box;
};

// Instances where one ranking needed strictly fewer erasures than the other
// to flip the decision. A ranking that never flips counts as slower than one
// that does.
struct FasterCounts {
  size_t gradient_faster = 0;
  size_t attention_faster = 0;
  size_t ties = 0;
  // gradient_faster / attention_faster, unset when the denominator is zero.
  std::optional<double> ratio;
};

FasterCounts CountFaster(std::span<const AuditRecord> records);

struct ScatterPoint {
  uint64_t doc_id = 0;
  RankingScheme target = RankingScheme::kAttention;
  double delta_alpha = 0.0;
  double delta_js = 0.0;
};

struct TargetStats {
  RankingScheme target = RankingScheme::kAttention;
  ContingencyTable contingency;
  // Histogram over delta_alpha of the instances with delta_js < 0.
  Histogram negative_js;
  size_t negative_js_count = 0;
  // delta_js < 0 while delta_alpha > 0.8.
  size_t negative_js_high_delta_alpha = 0;
  double min_delta_alpha = 0.0;
};

struct OracleCheck {
  // Included instances with a brute-force result.
  size_t instances = 0;
  // Flipped curves whose removed_count is below the brute-force minimum.
  size_t violations = 0;
};

struct Summary {
  size_t total = 0;
  size_t included = 0;
  size_t excluded_length_one = 0;
  size_t excluded_never_flips = 0;
  double histogram_width = 0.1;
  std::vector<TargetStats> targets;  // kTargetSchemes order
  std::vector<SchemeStats> schemes;  // kAllSchemes order
  FasterCounts faster;
  OracleCheck oracle;
  std::vector<ScatterPoint> scatter;
};

// Throws kNothingIncluded "nothing-included" when every record is excluded
// (or there are none). Records are sorted by doc_id first, so the result is
// independent of input order.
Summary Aggregate(std::span<const AuditRecord> records,
                  double histogram_width = 0.1);

// Canonical JSON: fixed key order, floats rounded to 6 decimal places.
std::string SummaryToJson(const Summary& summary);

// Writes summary.json, scatter_delta_js.csv, neg_delta_js_hist.csv,
// fraction_removed.csv and prob_mass_zeroed.csv into `dir`. Returns the
// written paths.
std::vector<std::filesystem::path> WriteReport(const Summary& summary,
                                               const std::filesystem::path& dir);

}  // namespace attnaudit

#endif  // ATTNAUDIT_REPORT_H_
