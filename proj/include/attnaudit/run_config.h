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


#ifndef ATTNAUDIT_RUN_CONFIG_H_
#define ATTNAUDIT_RUN_CONFIG_H_

// The single JSON run configuration shared by every subcommand:
//
//   {
//     "data":   {"synthetic": {...}} or {"jsonl": {"train":, "dev":, "test":}},
//               plus optional "vocab_min_count" and "vocab_max_size",
//     "model":  {"arch": "FLAN", "encoder": "rnn", "embed_dim": ..., ...},
//     "train":  {"learning_rate": ..., "seed": ..., "max_epochs": ..., ...},
//     "audit":  {"seed": ..., "oracle_cap": ..., "histogram_width": ...,
//                "abs_gradient": false},
//     "output": {"directory": "runs/x"}
//   }
//
// Relative paths are resolved against the directory holding the config file.
// Unknown keys are rejected so that typos do not silently fall back to
// defaults.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>

#include "attnaudit/audit.h"
#include "attnaudit/models.h"
#include "attnaudit/text_data.h"
#include "attnaudit/training.h"
#include "json.hpp"

namespace attnaudit {

struct JsonlPaths {
  std::filesystem::path train;
  std::filesystem::path dev;
  std::filesystem::path test;
};

struct DataConfig {
  // Exactly one of these is set.
  std::optional<SyntheticSpec> synthetic;
  std::optional<JsonlPaths> jsonl;
  uint32_t vocab_min_count = 1;
  // 0 keeps every token that passes vocab_min_count.
  uint32_t vocab_max_size = 0;
};

struct RunConfig {
  DataConfig data;
  // vocab_size is filled in from the built vocabulary at train time; for
  // synthetic data num_classes is taken from the generator.
  ModelConfig model;
  TrainConfig train;
  AuditOptions audit;
  double histogram_width = 0.1;
  std::filesystem::path output_dir;
};

nlohmann::ordered_json ModelConfigToJson(const ModelConfig& config);
// Keys absent from `obj` keep their defaults.
ModelConfig ModelConfigFromJson(const nlohmann::ordered_json& obj);
nlohmann::ordered_json TrainConfigToJson(const TrainConfig& config);
TrainConfig TrainConfigFromJson(const nlohmann::ordered_json& obj);
nlohmann::ordered_json SyntheticSpecToJson(const SyntheticSpec& spec);
SyntheticSpec SyntheticSpecFromJson(const nlohmann::ordered_json& obj);

// Throws kConfig for unknown keys, wrong types or invalid values.
RunConfig ParseRunConfig(std::string_view text,
                         const std::filesystem::path& base_dir);
// Throws kConfig when the file is missing or unreadable.
RunConfig LoadRunConfig(const std::filesystem::path& path);
// Paths are written as resolved absolute paths.
nlohmann::ordered_json RunConfigToJson(const RunConfig& config);

// Replaces every seed (data generation, model init, training, audit).
void OverrideSeeds(RunConfig& config, uint64_t seed);

}  // namespace attnaudit

#endif  // ATTNAUDIT_RUN_CONFIG_H_
