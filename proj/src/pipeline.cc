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

#include "attnaudit/pipeline.h"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>

#include "attnaudit/selftest.h"
#include "fmt/format.h"
#include "json.hpp"

namespace attnaudit {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void EnsureDirectory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, fmt::format("cannot create '{}': {}",
                                            dir.string(), ec.message()));
  }
}

void WriteJsonFile(const fs::path& path, const ordered_json& value) {
  std::ofstream out(path, std::ios::binary);
  out << value.dump(2) << '\n';
  if (!out) {
    throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
  }
}

void RequireFile(const fs::path& path, const char* produced_by) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kData,
                fmt::format("missing '{}'; run `{}` first", path.string(),
                            produced_by));
  }
}

std::string UtcTimestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

ordered_json TrainReportToJson(const TrainReport& report, double test_accuracy,
                               const Model& model) {
  ordered_json obj;
  obj["model"] = ModelName(model.config.arch, model.config.encoder);
  obj["parameters"] = NumParameters(model);
  obj["train_loss"] = report.train_loss;
  obj["dev_accuracy"] = report.dev_accuracy;
  obj["best_epoch"] = report.best_epoch;
  obj["stopped_reason"] = StopReasonName(report.stopped_reason);
  obj["test_accuracy"] = test_accuracy;
  return obj;
}

}  // namespace

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
      return kExitConfig;
    case ErrorCode::kData:
    case ErrorCode::kIo:
    case ErrorCode::kMalformedFile:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kNothingIncluded:
      return kExitData;
    case ErrorCode::kDivergence:
      return kExitDivergence;
    default:
      return kExitFailure;
  }
}

RunConfig ResolveConfig(const CommandOptions& options) {
  RunConfig config = LoadRunConfig(options.config_path);
  if (options.seed) OverrideSeeds(config, *options.seed);
  if (options.out) config.output_dir = fs::absolute(*options.out);
  return config;
}

CorpusSplits LoadCorpus(const RunConfig& config) {
  if (config.data.synthetic) return GenerateSynthetic(*config.data.synthetic);
  const JsonlPaths& paths = *config.data.jsonl;
  CorpusSplits splits;
  splits.train = LoadJsonl(paths.train, config.model.num_classes);
  splits.dev = LoadJsonl(paths.dev, config.model.num_classes);
  splits.test = LoadJsonl(paths.test, config.model.num_classes);
  return splits;
}

std::vector<fs::path> GenData(const RunConfig& config) {
  if (!config.data.synthetic) {
    throw Error(ErrorCode::kConfig,
                "gen-data needs a 'data.synthetic' source in the config");
  }
  const CorpusSplits splits = GenerateSynthetic(*config.data.synthetic);
  const fs::path dir = config.output_dir / artifacts::kDataDir;
  EnsureDirectory(dir);
  std::vector<fs::path> written = {dir / "train.jsonl", dir / "dev.jsonl",
                                   dir / "test.jsonl"};
  WriteJsonl(written[0], splits.train);
  WriteJsonl(written[1], splits.dev);
  WriteJsonl(written[2], splits.test);
  return written;
}

TrainStageResult TrainStage(const RunConfig& config, std::ostream* log) {
  const CorpusSplits splits = LoadCorpus(config);
  if (splits.train.empty() || splits.dev.empty()) {
    throw Error(ErrorCode::kData, "train and dev splits must be non-empty");
  }
  const Vocab vocab = Vocab::Build(splits.train, config.data.vocab_min_count,
                                   config.data.vocab_max_size);
  ModelConfig model_config = config.model;
  model_config.vocab_size = static_cast<uint32_t>(vocab.size());
  const std::vector<Document> train = vocab.Encode(splits.train);
  const std::vector<Document> dev = vocab.Encode(splits.dev);
  const std::vector<Document> test = vocab.Encode(splits.test);

  EpochCallback on_epoch;
  if (log != nullptr) {
    on_epoch = [log](uint32_t epoch, double loss, double accuracy) {
      *log << fmt::format("epoch {:3d}  train loss {:.4f}  dev accuracy {:.4f}\n",
                          epoch, loss, accuracy);
    };
  }
  TrainResult trained =
      Train(InitModel(model_config), train, dev, config.train, on_epoch);

  TrainStageResult result;
  result.test_accuracy =
      test.empty() ? 0.0 : EvaluateAccuracy(trained.model, test);
  EnsureDirectory(config.output_dir);
  result.written = {config.output_dir / artifacts::kVocab,
                    config.output_dir / artifacts::kModel,
                    config.output_dir / artifacts::kTrainReport};
  vocab.Save(result.written[0]);
  SaveModel(trained.model, result.written[1]);
  WriteJsonFile(result.written[2],
                TrainReportToJson(trained.report, result.test_accuracy,
                                  trained.model));
  result.model = std::move(trained.model);
  result.report = std::move(trained.report);
  return result;
}

AuditStageResult AuditStage(const RunConfig& config, uint32_t workers) {
  const fs::path vocab_path = config.output_dir / artifacts::kVocab;
  const fs::path model_path = config.output_dir / artifacts::kModel;
  RequireFile(vocab_path, "attnaudit train");
  RequireFile(model_path, "attnaudit train");
  const Vocab vocab = Vocab::Load(vocab_path);
  const Model model = LoadModel(model_path);
  if (model.config.vocab_size != vocab.size()) {
    throw Error(ErrorCode::kData,
                fmt::format("model expects {} vocabulary entries, vocab.json "
                            "has {}",
                            model.config.vocab_size, vocab.size()));
  }
  const CorpusSplits splits = LoadCorpus(config);
  if (splits.test.empty()) {
    throw Error(ErrorCode::kData, "the test split is empty");
  }
  AuditOptions options = config.audit;
  options.workers = workers;
  AuditStageResult result;
  result.records = AuditCorpus(model, vocab.Encode(splits.test), options);
  EnsureDirectory(config.output_dir);
  result.written = {config.output_dir / artifacts::kAudit};
  WriteAuditJsonl(result.written[0], result.records);
  return result;
}

ReportStageResult ReportStage(const RunConfig& config) {
  const fs::path audit_path = config.output_dir / artifacts::kAudit;
  RequireFile(audit_path, "attnaudit audit");
  const std::vector<AuditRecord> records = ReadAuditJsonl(audit_path);
  ReportStageResult result;
  result.summary = Aggregate(records, config.histogram_width);
  result.written = WriteReport(result.summary, config.output_dir);
  return result;
}

std::string Sha256Hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, fmt::format("cannot read '{}'", path.string()));
  }
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256: digest initialisation failed");
  }
  char buffer[1 << 16];
  while (in) {
    in.read(buffer, sizeof(buffer));
    if (in.gcount() > 0) {
      EVP_DigestUpdate(ctx.get(), buffer, static_cast<size_t>(in.gcount()));
    }
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &length);
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

fs::path WriteManifest(const RunConfig& config, const std::string& command,
                       uint32_t workers, const std::vector<fs::path>& files) {
  ordered_json manifest;
  manifest["tool"] = "attnaudit";
  manifest["version"] = kToolVersion;
  manifest["command"] = command;
  manifest["created_utc"] = UtcTimestamp();
  manifest["workers"] = workers;
  manifest["seeds"] = {
      {"data", config.data.synthetic ? ordered_json(config.data.synthetic->seed)
                                     : ordered_json(nullptr)},
      {"model", config.model.seed},
      {"train", config.train.seed},
      {"audit", config.audit.seed}};
  manifest["config"] = RunConfigToJson(config);
  ordered_json inventory = ordered_json::array();
  for (const fs::path& file : files) {
    inventory.push_back(
        {{"path", file.lexically_relative(config.output_dir).generic_string()},
         {"bytes", fs::file_size(file)},
         {"sha256", Sha256Hex(file)}});
  }
  manifest["files"] = std::move(inventory);
  const fs::path path = config.output_dir / fmt::format("manifest-{}.json", command);
  WriteJsonFile(path, manifest);
  return path;
}

std::string VerifyManifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) return fmt::format("cannot read '{}'", manifest_path.string());
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(in);
    for (const auto& entry : manifest.at("files")) {
      const fs::path file =
          manifest_path.parent_path() / entry.at("path").get<std::string>();
      if (!fs::exists(file)) {
        return fmt::format("'{}' is listed but missing", file.string());
      }
      if (Sha256Hex(file) != entry.at("sha256").get<std::string>()) {
        return fmt::format("'{}' does not match its digest", file.string());
      }
    }
  } catch (const ordered_json::exception& e) {
    return fmt::format("malformed manifest: {}", e.what());
  }
  return "";
}

int RunCommand(const std::string& command, const CommandOptions& options,
               std::ostream& log, std::ostream& err) {
  try {
    if (command == "selftest") {
      SelftestOptions selftest;
      if (options.seed) selftest.seed = *options.seed;
      bool all_passed = true;
      for (const SelftestCheck& check : RunSelftest(selftest)) {
        log << fmt::format("{} {}: {}\n", check.passed ? "PASS" : "FAIL",
                           check.name, check.detail);
        all_passed = all_passed && check.passed;
      }
      return all_passed ? kExitOk : kExitSelftest;
    }

    const RunConfig config = ResolveConfig(options);
    std::vector<fs::path> written;
    if (command == "gen-data") {
      written = GenData(config);
    } else if (command == "train") {
      TrainStageResult result = TrainStage(config, &log);
      log << fmt::format("best epoch {} ({}), test accuracy {:.4f}\n",
                         result.report.best_epoch,
                         StopReasonName(result.report.stopped_reason),
                         result.test_accuracy);
      written = std::move(result.written);
    } else if (command == "audit") {
      AuditStageResult result = AuditStage(config, options.workers);
      size_t included = 0;
      for (const auto& r : result.records) included += r.excluded ? 0 : 1;
      log << fmt::format("audited {} documents, {} included\n",
                         result.records.size(), included);
      written = std::move(result.written);
    } else if (command == "report") {
      ReportStageResult result = ReportStage(config);
      for (const TargetStats& t : result.summary.targets) {
        log << fmt::format("single-weight target: {}\n",
                           RankingSchemeName(t.target))
            << FormatContingency(t.contingency);
      }
      written = std::move(result.written);
    } else {
      err << fmt::format("unknown command '{}'\n", command);
      return kExitConfig;
    }
    const fs::path manifest =
        WriteManifest(config, command, options.workers, written);
    log << fmt::format("wrote {}\n", manifest.string());
    return kExitOk;
  } catch (const Error& e) {
    err << fmt::format("error [{}]: {}\n", ErrorCodeName(e.code()), e.what());
    return ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    err << fmt::format("error: {}\n", e.what());
    return kExitFailure;
  }
}

}  // namespace attnaudit
