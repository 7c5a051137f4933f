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


#ifndef ATTNAUDIT_PIPELINE_H_
#define ATTNAUDIT_PIPELINE_H_

// The gen-data / train / audit / report stages behind the command-line tool.
// Each stage reads the run configuration, writes its artifacts into the
// output directory and finishes with a manifest-<stage>.json listing every
// file it wrote together with its SHA-256 digest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "attnaudit/error.h"
#include "attnaudit/report.h"
#include "attnaudit/run_config.h"
#include "attnaudit/text_data.h"
#include "attnaudit/training.h"

namespace attnaudit {

inline constexpr const char* kToolVersion = "0.1.0";

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitSelftest = 5;

int ExitCodeFor(ErrorCode code);

struct CommandOptions {
  std::filesystem::path config_path;
  std::optional<uint64_t> seed;
  uint32_t workers = 1;
  // Replaces output.directory.
  std::optional<std::filesystem::path> out;
};

// Loads the config and applies the command-line overrides.
RunConfig ResolveConfig(const CommandOptions& options);

// Artifact names inside the output directory.
namespace artifacts {
inline constexpr const char* kDataDir = "data";
inline constexpr const char* kVocab = "vocab.json";
inline constexpr const char* kModel = "model.json";
inline constexpr const char* kTrainReport = "train_report.json";
inline constexpr const char* kAudit = "audit.jsonl";
}  // namespace artifacts

// Train/dev/test documents of the configured data source. Synthetic data is
// regenerated from its seed, so gen-data is optional.
CorpusSplits LoadCorpus(const RunConfig& config);

std::vector<std::filesystem::path> GenData(const RunConfig& config);

struct TrainStageResult {
  Model model;
  TrainReport report;
  double test_accuracy = 0.0;
  std::vector<std::filesystem::path> written;
};
TrainStageResult TrainStage(const RunConfig& config, std::ostream* log);

struct AuditStageResult {
  std::vector<AuditRecord> records;
  std::vector<std::filesystem::path> written;
};
// Audits the test split with the model written by TrainStage.
AuditStageResult AuditStage(const RunConfig& config, uint32_t workers);

struct ReportStageResult {
  Summary summary;
  std::vector<std::filesystem::path> written;
};
ReportStageResult ReportStage(const RunConfig& config);

std::string Sha256Hex(const std::filesystem::path& path);

// Writes <dir>/manifest-<command>.json and returns its path.
std::filesystem::path WriteManifest(
    const RunConfig& config, const std::string& command, uint32_t workers,
    const std::vector<std::filesystem::path>& files);

// Re-hashes every file a manifest lists. Returns an empty string when all
// files exist and match, or a description of the first problem.
std::string VerifyManifest(const std::filesystem::path& manifest_path);

// Runs one subcommand end to end, reporting progress to `log` and failures to
// `err`. Returns the process exit code.
int RunCommand(const std::string& command, const CommandOptions& options,
               std::ostream& log, std::ostream& err);

}  // namespace attnaudit

#endif  // ATTNAUDIT_PIPELINE_H_
