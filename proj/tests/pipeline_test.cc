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

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>

#include "attnaudit/audit.h"
#include "gtest/gtest.h"
#include "json.hpp"
#include "test_util.h"

namespace attnaudit {
namespace {

using ::attnaudit::testing::ReadFile;
using ::attnaudit::testing::TempDir;
using ::attnaudit::testing::WriteFile;
namespace fs = std::filesystem;

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult RunCli(const std::string& args) {
  const char* cli = std::getenv("ATTNAUDIT_CLI");
  if (cli == nullptr) {
    ADD_FAILURE() << "ATTNAUDIT_CLI is not set";
    return {};
  }
  const std::string command = std::string(cli) + " " + args + " 2>&1";
  CliResult result;
  FILE* pipe = popen(command.c_str(), "r");
  if (pipe == nullptr) return result;
  char buffer[4096];
  size_t n;
  while ((n = fread(buffer, 1, sizeof(buffer), pipe)) > 0) {
    result.output.append(buffer, n);
  }
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string Config(const std::string& synthetic_overrides,
                   const std::string& model = "\"arch\": \"FLAN\", "
                                              "\"encoder\": \"rnn\"") {
  return R"({
  "data": {"synthetic": {"num_classes": 3, "vocab_size": 60,
                         "train_docs": 120, "dev_docs": 40, "test_docs": 40,
                         "min_sentences": 1, "max_sentences": 3,
                         "min_sentence_length": 3, "max_sentence_length": 6,
                         "signal_mode": "planted-single",
                         "signal_strength": 1.0, "seed": 11)" +
         synthetic_overrides + R"(}},
  "model": {)" + model + R"(, "embed_dim": 8, "enc_hidden_dim": 4,
            "att_dim": 6, "seed": 2},
  "train": {"learning_rate": 0.01, "max_epochs": 3, "patience": 2, "seed": 3},
  "audit": {"seed": 4, "oracle_cap": 8},
  "output": {"directory": "out"}
})";
}

TEST(PipelineTest, FullRunWritesVerifiableArtifacts) {
  TempDir dir;
  WriteFile(dir.path() / "config.json", Config(""));
  const std::string config = "--config " + (dir.path() / "config.json").string();
  for (const char* command : {"gen-data", "train", "audit", "report"}) {
    const CliResult r = RunCli(std::string(command) + " " + config);
    ASSERT_EQ(r.exit_code, 0) << command << ":\n" << r.output;
    const fs::path manifest =
        dir.path() / "out" / (std::string("manifest-") + command + ".json");
    ASSERT_TRUE(fs::exists(manifest)) << manifest;
    EXPECT_EQ(VerifyManifest(manifest), "") << command;
    if (std::string(command) == "report") {
      EXPECT_NE(r.output.find("random: yes"), std::string::npos) << r.output;
    }
  }
  const fs::path out = dir.path() / "out";
  for (const char* name :
       {"data/train.jsonl", "vocab.json", "model.json", "train_report.json",
        "audit.jsonl", "summary.json", "scatter_delta_js.csv",
        "neg_delta_js_hist.csv", "fraction_removed.csv",
        "prob_mass_zeroed.csv"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }
  EXPECT_EQ(ReadAuditJsonl(out / "audit.jsonl").size(), 40);
  const auto summary = nlohmann::json::parse(ReadFile(out / "summary.json"));
  EXPECT_EQ(summary["records"], 40);

  // Tampering with an artifact is caught by its manifest.
  WriteFile(out / "summary.json", "{}");
  EXPECT_NE(VerifyManifest(out / "manifest-report.json"), "");
}

TEST(PipelineTest, OutAndWorkersFlagsKeepResultsIdentical) {
  TempDir dir;
  WriteFile(dir.path() / "config.json", Config(""));
  const std::string config = "--config " + (dir.path() / "config.json").string();
  ASSERT_EQ(RunCli("train " + config).exit_code, 0);
  ASSERT_EQ(RunCli("audit " + config).exit_code, 0);
  const std::string other = (dir.path() / "other").string();
  ASSERT_EQ(RunCli("train " + config + " --out " + other).exit_code, 0);
  ASSERT_EQ(RunCli("audit " + config + " --workers 3 --out " + other).exit_code,
            0);
  EXPECT_EQ(ReadFile(dir.path() / "out" / "audit.jsonl"),
            ReadFile(dir.path() / "other" / "audit.jsonl"));
}

TEST(PipelineTest, JsonlDataSourceMatchesSynthetic) {
  TempDir dir;
  WriteFile(dir.path() / "config.json", Config(""));
  ASSERT_EQ(RunCli("gen-data --config " +
                   (dir.path() / "config.json").string()).exit_code, 0);
  std::string jsonl = Config("");
  const size_t begin = jsonl.find("\"synthetic\"");
  const size_t end = jsonl.find("}},") + 1;
  jsonl.replace(begin, end - begin,
                "\"jsonl\": {\"train\": \"out/data/train.jsonl\", "
                "\"dev\": \"out/data/dev.jsonl\", "
                "\"test\": \"out/data/test.jsonl\"}");
  jsonl.replace(jsonl.find("\"att_dim\": 6"), 12,
                "\"att_dim\": 6, \"num_classes\": 3");
  jsonl.replace(jsonl.find("\"directory\": \"out\""), 18,
                "\"directory\": \"out2\"");
  WriteFile(dir.path() / "jsonl.json", jsonl);
  const CliResult r =
      RunCli("train --config " + (dir.path() / "jsonl.json").string());
  ASSERT_EQ(r.exit_code, 0) << r.output << "\n" << jsonl;
  ASSERT_EQ(RunCli("train --config " +
                   (dir.path() / "config.json").string()).exit_code, 0);
  EXPECT_EQ(ReadFile(dir.path() / "out2" / "model.json"),
            ReadFile(dir.path() / "out" / "model.json"));
}

TEST(PipelineTest, MissingConfigExitsTwo) {
  const CliResult r = RunCli("train --config /nonexistent/config.json");
  EXPECT_EQ(r.exit_code, kExitConfig) << r.output;
  EXPECT_NE(r.output.find("error"), std::string::npos);
}

TEST(PipelineTest, BadFlagsAndKeysExitTwo) {
  TempDir dir;
  WriteFile(dir.path() / "config.json", Config(""));
  const std::string config = "--config " + (dir.path() / "config.json").string();
  EXPECT_EQ(RunCli("audit " + config + " --workers 0").exit_code, kExitConfig);
  EXPECT_EQ(RunCli("bogus").exit_code, kExitConfig);
  WriteFile(dir.path() / "bad.json", Config(", \"colour\": 1"));
  const CliResult r =
      RunCli("train --config " + (dir.path() / "bad.json").string());
  EXPECT_EQ(r.exit_code, kExitConfig);
  EXPECT_NE(r.output.find("colour"), std::string::npos) << r.output;
}

TEST(PipelineTest, AuditWithoutModelIsDataError) {
  TempDir dir;
  WriteFile(dir.path() / "config.json", Config(""));
  const CliResult r =
      RunCli("audit --config " + (dir.path() / "config.json").string());
  EXPECT_EQ(r.exit_code, kExitData) << r.output;
}

TEST(PipelineTest, NothingIncludedExitsThree) {
  TempDir dir;
  // HAN over one-sentence documents leaves a final sequence of length one.
  std::string config = Config("", "\"arch\": \"HAN\", \"encoder\": \"noenc\"");
  config.replace(config.find("\"max_sentences\": 3"), 18,
                 "\"max_sentences\": 1");
  WriteFile(dir.path() / "config.json", config);
  const std::string flag = "--config " + (dir.path() / "config.json").string();
  ASSERT_EQ(RunCli("train " + flag).exit_code, 0);
  ASSERT_EQ(RunCli("audit " + flag).exit_code, 0);
  const CliResult r = RunCli("report " + flag);
  EXPECT_EQ(r.exit_code, kExitData) << r.output;
  EXPECT_NE(r.output.find("nothing-included"), std::string::npos) << r.output;
}

TEST(PipelineTest, SelftestPasses) {
  const CliResult r = RunCli("selftest --seed 3");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS gradients/HANrnn"), std::string::npos)
      << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos) << r.output;
}

TEST(ExitCodeTest, Mapping) {
  EXPECT_EQ(ExitCodeFor(ErrorCode::kConfig), 2);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kData), 3);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kMalformedFile), 3);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kNothingIncluded), 3);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kDivergence), 4);
  EXPECT_EQ(ExitCodeFor(ErrorCode::kShapeMismatch), 1);
}

}  // namespace
}  // namespace attnaudit
