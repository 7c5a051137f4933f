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

// attnaudit: train small attention classifiers and audit whether their
// attention weights identify the inputs that drive each decision.
//
//   attnaudit gen-data --config run.json
//   attnaudit train    --config run.json [--seed N] [--out DIR]
//   attnaudit audit    --config run.json [--workers N]
//   attnaudit report   --config run.json
//   attnaudit selftest [--seed N]

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "attnaudit/pipeline.h"

int main(int argc, char** argv) {
  CLI::App app{"Erasure-based audit of attention weights as importance "
               "rankings"};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  uint32_t workers = 1;
  std::string out_dir;

  const char* kStages[][2] = {
      {"gen-data", "Write synthetic train/dev/test JSONL splits"},
      {"train", "Train the configured model; writes vocab, model and report"},
      {"audit", "Run the erasure tests over the test split"},
      {"report", "Aggregate the audit into summary JSON and plot CSVs"},
  };
  for (const auto& [name, help] : kStages) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Run configuration (JSON)")
        ->required();
    sub->add_option("--seed", seed, "Override every seed in the config");
    sub->add_option("--workers", workers, "Audit worker threads")
        ->check(CLI::Range(1u, 256u));
    sub->add_option("--out", out_dir, "Override output.directory");
  }
  CLI::App* selftest = app.add_subcommand(
      "selftest", "Gradient and divergence property checks");
  selftest->add_option("--config", config_path, "Ignored; accepted for symmetry");
  selftest->add_option("--seed", seed, "Seed for the random cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? attnaudit::kExitOk : attnaudit::kExitConfig;
  }

  CLI::App* chosen = app.get_subcommands().front();
  attnaudit::CommandOptions options;
  options.config_path = config_path;
  if (chosen->count("--seed") > 0) options.seed = seed;
  options.workers = workers;
  if (!out_dir.empty()) options.out = out_dir;
  return attnaudit::RunCommand(chosen->get_name(), options, std::cout,
                               std::cerr);
}
