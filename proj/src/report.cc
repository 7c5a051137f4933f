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

#include "attnaudit/report.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "attnaudit/error.h"
#include "fmt/format.h"
#include "json.hpp"

namespace attnaudit {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

double Round6(double x) {
  const double r = std::round(x * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;  // no "-0.0" in the output
}

double Percent(size_t count, size_t total) {
  return 100.0 * static_cast<double>(count) / static_cast<double>(total);
}

const SingleWeightOutcome* FindTarget(const AuditRecord& record,
                                      RankingScheme target) {
  for (const auto& s : record.single_weight) {
    if (s.target == target) return &s;
  }
  return nullptr;
}

const RemovalOutcome* FindScheme(const AuditRecord& record,
                                 RankingScheme scheme) {
  for (const auto& r : record.removal) {
    if (r.scheme == scheme) return &r;
  }
  return nullptr;
}

ordered_json BoxJson(const BoxStats& box) {
  ordered_json obj;
  obj["min_whisker"] = Round6(box.min_whisker);
  obj["q1"] = Round6(box.q1);
  obj["median"] = Round6(box.median);
  obj["q3"] = Round6(box.q3);
  obj["max_whisker"] = Round6(box.max_whisker);
  obj["outliers"] = box.outlier_count;
  return obj;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
  }
}

}  // namespace

ContingencyTable ContingencyFromCounts(size_t yes_yes, size_t yes_no,
                                       size_t no_yes, size_t no_no) {
  ContingencyTable table;
  table.instances = yes_yes + yes_no + no_yes + no_no;
  if (table.instances == 0) return table;
  table.star_yes_rand_yes = Percent(yes_yes, table.instances);
  table.star_yes_rand_no = Percent(yes_no, table.instances);
  table.star_no_rand_yes = Percent(no_yes, table.instances);
  table.star_no_rand_no = Percent(no_no, table.instances);
  return table;
}

std::string FormatContingency(const ContingencyTable& table,
                              std::string_view top_label) {
  const std::string yes = fmt::format("{}: yes", top_label);
  const std::string no = fmt::format("{}: no", top_label);
  const size_t label_width = std::max<size_t>(no.size(), yes.size()) + 2;
  std::string out = fmt::format("{:<{}}{:>13}{:>13}\n", "", label_width,
                                "random: yes", "random: no");
  out += fmt::format("{:<{}}{:>13.1f}{:>13.1f}\n", yes, label_width,
                     table.star_yes_rand_yes, table.star_yes_rand_no);
  out += fmt::format("{:<{}}{:>13.1f}{:>13.1f}\n", no, label_width,
                     table.star_no_rand_yes, table.star_no_rand_no);
  const double shown = std::round(table.star_yes_rand_yes * 10) / 10 +
                       std::round(table.star_yes_rand_no * 10) / 10 +
                       std::round(table.star_no_rand_yes * 10) / 10 +
                       std::round(table.star_no_rand_no * 10) / 10;
  out += fmt::format("total {:.1f}% of {} instances\n", shown, table.instances);
  return out;
}

FasterCounts CountFaster(std::span<const AuditRecord> records) {
  FasterCounts counts;
  for (const auto& record : records) {
    if (record.excluded) continue;
    const RemovalOutcome* grad = FindScheme(record, RankingScheme::kGradient);
    const RemovalOutcome* attn = FindScheme(record, RankingScheme::kAttention);
    if (grad == nullptr || attn == nullptr) continue;
    // A curve that never flips is charged n + 1 erasures.
    const size_t g = grad->flipped ? grad->removed_count
                                   : record.final_seq_len + 1;
    const size_t a = attn->flipped ? attn->removed_count
                                   : record.final_seq_len + 1;
    if (g < a) {
      ++counts.gradient_faster;
    } else if (a < g) {
      ++counts.attention_faster;
    } else {
      ++counts.ties;
    }
  }
  if (counts.attention_faster > 0) {
    counts.ratio = static_cast<double>(counts.gradient_faster) /
                   static_cast<double>(counts.attention_faster);
  }
  return counts;
}

Summary Aggregate(std::span<const AuditRecord> input, double histogram_width) {
  std::vector<AuditRecord> records(input.begin(), input.end());
  std::stable_sort(records.begin(), records.end(),
                   [](const AuditRecord& a, const AuditRecord& b) {
                     return a.doc_id < b.doc_id;
                   });
  Summary summary;
  summary.total = records.size();
  summary.histogram_width = histogram_width;
  std::vector<const AuditRecord*> included;
  for (const auto& record : records) {
    if (!record.excluded) {
      included.push_back(&record);
    } else if (*record.excluded == ExclusionReason::kLengthOne) {
      ++summary.excluded_length_one;
    } else {
      ++summary.excluded_never_flips;
    }
  }
  summary.included = included.size();
  if (included.empty()) {
    throw Error(ErrorCode::kNothingIncluded,
                fmt::format("nothing-included: all {} records are excluded",
                            summary.total));
  }

  for (RankingScheme target : kTargetSchemes) {
    TargetStats stats;
    stats.target = target;
    size_t cells[2][2] = {{0, 0}, {0, 0}};
    std::vector<double> negative_alphas;
    bool first = true;
    for (const AuditRecord* record : included) {
      const SingleWeightOutcome* s = FindTarget(*record, target);
      if (s == nullptr) continue;
      ++cells[s->flip_star ? 0 : 1][s->flip_r ? 0 : 1];
      summary.scatter.push_back(
          {record->doc_id, target, s->delta_alpha, s->delta_js});
      if (s->delta_js < 0.0) {
        negative_alphas.push_back(s->delta_alpha);
        if (s->delta_alpha > 0.8) ++stats.negative_js_high_delta_alpha;
      }
      stats.min_delta_alpha =
          first ? s->delta_alpha : std::min(stats.min_delta_alpha, s->delta_alpha);
      first = false;
    }
    stats.contingency = ContingencyFromCounts(cells[0][0], cells[0][1],
                                              cells[1][0], cells[1][1]);
    stats.negative_js_count = negative_alphas.size();
    const double lo = target == RankingScheme::kAttention ? 0.0 : -1.0;
    stats.negative_js =
        ComputeHistogram(negative_alphas, lo, 1.0, histogram_width);
    summary.targets.push_back(std::move(stats));
  }

  for (RankingScheme scheme : kAllSchemes) {
    SchemeStats stats;
    stats.scheme = scheme;
    for (const AuditRecord* record : included) {
      const RemovalOutcome* r = FindScheme(*record, scheme);
      if (r == nullptr || !r->flipped) continue;
      ++stats.flipped;
      stats.doc_ids.push_back(record->doc_id);
      stats.fraction_removed.push_back(r->fraction_removed);
      stats.prob_mass_zeroed.push_back(r->prob_mass_zeroed);
    }
    if (stats.flipped > 0) {
      stats.fraction_box = ComputeBoxStats(stats.fraction_removed);
      stats.mass_box = ComputeBoxStats(stats.prob_mass_zeroed);
    }
    summary.schemes.push_back(std::move(stats));
  }

  summary.faster = CountFaster(records);

  for (const AuditRecord* record : included) {
    if (!record->oracle_min_flip) continue;
    ++summary.oracle.instances;
    for (const auto& r : record->removal) {
      if (r.flipped && r.removed_count < *record->oracle_min_flip) {
        ++summary.oracle.violations;
      }
    }
  }
  return summary;
}

std::string SummaryToJson(const Summary& summary) {
  ordered_json root;
  root["records"] = summary.total;
  root["included"] = summary.included;
  root["excluded"] = {{"length-one", summary.excluded_length_one},
                      {"never-flips", summary.excluded_never_flips}};

  ordered_json single = ordered_json::object();
  for (const auto& t : summary.targets) {
    ordered_json obj;
    const ContingencyTable& c = t.contingency;
    obj["contingency"] = {{"instances", c.instances},
                          {"star_yes_rand_yes", Round6(c.star_yes_rand_yes)},
                          {"star_yes_rand_no", Round6(c.star_yes_rand_no)},
                          {"star_no_rand_yes", Round6(c.star_no_rand_yes)},
                          {"star_no_rand_no", Round6(c.star_no_rand_no)}};
    obj["min_delta_alpha"] = Round6(t.min_delta_alpha);
    obj["negative_delta_js"] = t.negative_js_count;
    obj["negative_delta_js_delta_alpha_above_0.8"] =
        t.negative_js_high_delta_alpha;
    ordered_json hist;
    hist["width"] = Round6(t.negative_js.width);
    ordered_json bins = ordered_json::array();
    for (const auto& bin : t.negative_js.bins) {
      bins.push_back({{"lo", Round6(bin.lo)}, {"count", bin.count}});
    }
    hist["bins"] = std::move(bins);
    hist["out_of_range"] = t.negative_js.overflow;
    obj["negative_delta_js_histogram"] = std::move(hist);
    single[RankingSchemeName(t.target)] = std::move(obj);
  }
  root["single_weight"] = std::move(single);

  ordered_json removal = ordered_json::object();
  for (const auto& s : summary.schemes) {
    ordered_json obj;
    obj["flipped"] = s.flipped;
    if (s.flipped > 0) {
      obj["fraction_removed"] = BoxJson(s.fraction_box);
      obj["prob_mass_zeroed"] = BoxJson(s.mass_box);
    } else {
      obj["fraction_removed"] = nullptr;
      obj["prob_mass_zeroed"] = nullptr;
    }
    removal[RankingSchemeName(s.scheme)] = std::move(obj);
  }
  root["removal"] = std::move(removal);

  root["gradient_vs_attention"] = {
      {"gradient_faster", summary.faster.gradient_faster},
      {"attention_faster", summary.faster.attention_faster},
      {"ties", summary.faster.ties},
      {"ratio", summary.faster.ratio ? ordered_json(Round6(*summary.faster.ratio))
                                     : ordered_json(nullptr)}};
  root["oracle"] = {{"instances", summary.oracle.instances},
                    {"violations", summary.oracle.violations}};
  return root.dump(2) + "\n";
}

std::vector<fs::path> WriteReport(const Summary& summary, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, fmt::format("cannot create '{}': {}",
                                            dir.string(), ec.message()));
  }
  std::vector<fs::path> written;
  auto emit = [&](const char* name, const std::string& text) {
    written.push_back(dir / name);
    WriteText(written.back(), text);
  };

  emit("summary.json", SummaryToJson(summary));

  std::string scatter = "doc_id,target,delta_alpha,delta_js\n";
  for (const auto& p : summary.scatter) {
    scatter += fmt::format("{},{},{:.6f},{:.6f}\n", p.doc_id,
                           RankingSchemeName(p.target), Round6(p.delta_alpha),
                           Round6(p.delta_js));
  }
  emit("scatter_delta_js.csv", scatter);

  std::string hist = "target,bin_lo,bin_hi,count\n";
  for (const auto& t : summary.targets) {
    for (const auto& bin : t.negative_js.bins) {
      hist += fmt::format("{},{:.6f},{:.6f},{}\n", RankingSchemeName(t.target),
                          Round6(bin.lo), Round6(bin.lo + t.negative_js.width),
                          bin.count);
    }
  }
  emit("neg_delta_js_hist.csv", hist);

  std::string fraction = "doc_id,scheme,fraction_removed\n";
  std::string mass = "doc_id,scheme,prob_mass_zeroed\n";
  for (const auto& s : summary.schemes) {
    for (size_t i = 0; i < s.doc_ids.size(); ++i) {
      fraction += fmt::format("{},{},{:.6f}\n", s.doc_ids[i],
                              RankingSchemeName(s.scheme),
                              Round6(s.fraction_removed[i]));
      mass += fmt::format("{},{},{:.6f}\n", s.doc_ids[i],
                          RankingSchemeName(s.scheme),
                          Round6(s.prob_mass_zeroed[i]));
    }
  }
  emit("fraction_removed.csv", fraction);
  emit("prob_mass_zeroed.csv", mass);
  return written;
}

}  // namespace attnaudit
