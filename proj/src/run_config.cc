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

#include "attnaudit/run_config.h"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "attnaudit/error.h"
#include "fmt/format.h"

namespace attnaudit {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void RequireObject(const ordered_json& obj, std::string_view section) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::kConfig,
                fmt::format("config: '{}' must be an object", section));
  }
}

void CheckKeys(const ordered_json& obj, std::string_view section,
               std::initializer_list<std::string_view> allowed) {
  RequireObject(obj, section);
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("config: unknown key '{}.{}'", section, key));
    }
  }
}

template <typename T>
void ReadKey(const ordered_json& obj, std::string_view section,
             const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned()) {
        throw Error(ErrorCode::kConfig,
                    fmt::format("config: '{}.{}' must be a non-negative "
                                "integer",
                                section, key));
      }
    }
    out = it->get<T>();
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("config: '{}.{}': {}", section,
                                                key, e.what()));
  }
}

const char* SignalModeName(SignalMode mode) {
  return mode == SignalMode::kPlantedSingle ? "planted-single" : "distributed";
}

SignalMode ParseSignalMode(const std::string& name) {
  if (name == "planted-single") return SignalMode::kPlantedSingle;
  if (name == "distributed") return SignalMode::kDistributed;
  throw Error(ErrorCode::kConfig,
              fmt::format("config: unknown signal_mode '{}'", name));
}

fs::path Resolve(const fs::path& base_dir, const std::string& path) {
  fs::path p(path);
  if (p.is_relative()) p = base_dir / p;
  return p.lexically_normal();
}

}  // namespace

ordered_json ModelConfigToJson(const ModelConfig& config) {
  ordered_json obj;
  obj["arch"] = ArchitectureName(config.arch);
  obj["encoder"] = EncoderKindName(config.encoder);
  obj["vocab_size"] = config.vocab_size;
  obj["embed_dim"] = config.embed_dim;
  obj["enc_hidden_dim"] = config.enc_hidden_dim;
  obj["att_dim"] = config.att_dim;
  obj["num_classes"] = config.num_classes;
  obj["dropout_pre_sentence_encoder"] = config.dropout_pre_sentence_encoder;
  obj["dropout_pre_document_encoder"] = config.dropout_pre_document_encoder;
  obj["dropout_classifier"] = config.dropout_classifier;
  obj["seed"] = config.seed;
  return obj;
}

ModelConfig ModelConfigFromJson(const ordered_json& obj) {
  CheckKeys(obj, "model",
            {"arch", "encoder", "vocab_size", "embed_dim", "enc_hidden_dim",
             "att_dim", "num_classes", "dropout_pre_sentence_encoder",
             "dropout_pre_document_encoder", "dropout_classifier", "seed"});
  ModelConfig config;
  std::string arch = ArchitectureName(config.arch);
  std::string encoder = EncoderKindName(config.encoder);
  ReadKey(obj, "model", "arch", arch);
  ReadKey(obj, "model", "encoder", encoder);
  config.arch = ParseArchitecture(arch);
  config.encoder = ParseEncoderKind(encoder);
  ReadKey(obj, "model", "vocab_size", config.vocab_size);
  ReadKey(obj, "model", "embed_dim", config.embed_dim);
  ReadKey(obj, "model", "enc_hidden_dim", config.enc_hidden_dim);
  ReadKey(obj, "model", "att_dim", config.att_dim);
  ReadKey(obj, "model", "num_classes", config.num_classes);
  ReadKey(obj, "model", "dropout_pre_sentence_encoder",
          config.dropout_pre_sentence_encoder);
  ReadKey(obj, "model", "dropout_pre_document_encoder",
          config.dropout_pre_document_encoder);
  ReadKey(obj, "model", "dropout_classifier", config.dropout_classifier);
  ReadKey(obj, "model", "seed", config.seed);
  return config;
}

ordered_json TrainConfigToJson(const TrainConfig& config) {
  ordered_json obj;
  obj["learning_rate"] = config.adam.learning_rate;
  obj["beta1"] = config.adam.beta1;
  obj["beta2"] = config.adam.beta2;
  obj["epsilon"] = config.adam.epsilon;
  obj["seed"] = config.seed;
  obj["max_epochs"] = config.max_epochs;
  obj["patience"] = config.patience;
  obj["clip_norm"] = config.clip_norm;
  return obj;
}

TrainConfig TrainConfigFromJson(const ordered_json& obj) {
  CheckKeys(obj, "train",
            {"learning_rate", "beta1", "beta2", "epsilon", "seed",
             "max_epochs", "patience", "clip_norm"});
  TrainConfig config;
  ReadKey(obj, "train", "learning_rate", config.adam.learning_rate);
  ReadKey(obj, "train", "beta1", config.adam.beta1);
  ReadKey(obj, "train", "beta2", config.adam.beta2);
  ReadKey(obj, "train", "epsilon", config.adam.epsilon);
  ReadKey(obj, "train", "seed", config.seed);
  ReadKey(obj, "train", "max_epochs", config.max_epochs);
  ReadKey(obj, "train", "patience", config.patience);
  ReadKey(obj, "train", "clip_norm", config.clip_norm);
  return config;
}

ordered_json SyntheticSpecToJson(const SyntheticSpec& spec) {
  ordered_json obj;
  obj["num_classes"] = spec.num_classes;
  obj["vocab_size"] = spec.vocab_size;
  obj["train_docs"] = spec.train_docs;
  obj["dev_docs"] = spec.dev_docs;
  obj["test_docs"] = spec.test_docs;
  obj["min_sentences"] = spec.min_sentences;
  obj["max_sentences"] = spec.max_sentences;
  obj["min_sentence_length"] = spec.min_sentence_length;
  obj["max_sentence_length"] = spec.max_sentence_length;
  obj["signal_mode"] = SignalModeName(spec.signal_mode);
  obj["signal_strength"] = spec.signal_strength;
  obj["seed"] = spec.seed;
  return obj;
}

SyntheticSpec SyntheticSpecFromJson(const ordered_json& obj) {
  constexpr std::string_view kSection = "data.synthetic";
  CheckKeys(obj, kSection,
            {"num_classes", "vocab_size", "train_docs", "dev_docs",
             "test_docs", "min_sentences", "max_sentences",
             "min_sentence_length", "max_sentence_length", "signal_mode",
             "signal_strength", "seed"});
  SyntheticSpec spec;
  ReadKey(obj, kSection, "num_classes", spec.num_classes);
  ReadKey(obj, kSection, "vocab_size", spec.vocab_size);
  ReadKey(obj, kSection, "train_docs", spec.train_docs);
  ReadKey(obj, kSection, "dev_docs", spec.dev_docs);
  ReadKey(obj, kSection, "test_docs", spec.test_docs);
  ReadKey(obj, kSection, "min_sentences", spec.min_sentences);
  ReadKey(obj, kSection, "max_sentences", spec.max_sentences);
  ReadKey(obj, kSection, "min_sentence_length", spec.min_sentence_length);
  ReadKey(obj, kSection, "max_sentence_length", spec.max_sentence_length);
  std::string mode = SignalModeName(spec.signal_mode);
  ReadKey(obj, kSection, "signal_mode", mode);
  spec.signal_mode = ParseSignalMode(mode);
  ReadKey(obj, kSection, "signal_strength", spec.signal_strength);
  ReadKey(obj, kSection, "seed", spec.seed);
  return spec;
}

RunConfig ParseRunConfig(std::string_view text, const fs::path& base_dir) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw Error(ErrorCode::kConfig, fmt::format("config: {}", e.what()));
  }
  CheckKeys(root, "config", {"data", "model", "train", "audit", "output"});
  RunConfig config;

  if (!root.contains("data")) {
    throw Error(ErrorCode::kConfig, "config: missing 'data' section");
  }
  const ordered_json& data = root["data"];
  CheckKeys(data, "data",
            {"synthetic", "jsonl", "vocab_min_count", "vocab_max_size"});
  if (data.contains("synthetic") == data.contains("jsonl")) {
    throw Error(ErrorCode::kConfig,
                "config: 'data' needs exactly one of 'synthetic' or 'jsonl'");
  }
  if (data.contains("synthetic")) {
    config.data.synthetic = SyntheticSpecFromJson(data["synthetic"]);
  } else {
    const ordered_json& jsonl = data["jsonl"];
    CheckKeys(jsonl, "data.jsonl", {"train", "dev", "test"});
    JsonlPaths paths;
    for (const char* split : {"train", "dev", "test"}) {
      if (!jsonl.contains(split) || !jsonl[split].is_string()) {
        throw Error(ErrorCode::kConfig,
                    fmt::format("config: 'data.jsonl.{}' must be a path",
                                split));
      }
    }
    paths.train = Resolve(base_dir, jsonl["train"].get<std::string>());
    paths.dev = Resolve(base_dir, jsonl["dev"].get<std::string>());
    paths.test = Resolve(base_dir, jsonl["test"].get<std::string>());
    config.data.jsonl = paths;
  }
  ReadKey(data, "data", "vocab_min_count", config.data.vocab_min_count);
  ReadKey(data, "data", "vocab_max_size", config.data.vocab_max_size);

  if (root.contains("model")) config.model = ModelConfigFromJson(root["model"]);
  if (config.data.synthetic) {
    config.model.num_classes = config.data.synthetic->num_classes;
  }
  if (root.contains("train")) config.train = TrainConfigFromJson(root["train"]);

  if (root.contains("audit")) {
    const ordered_json& audit = root["audit"];
    CheckKeys(audit, "audit",
              {"seed", "oracle_cap", "histogram_width", "abs_gradient"});
    ReadKey(audit, "audit", "seed", config.audit.seed);
    ReadKey(audit, "audit", "oracle_cap", config.audit.oracle_cap);
    ReadKey(audit, "audit", "histogram_width", config.histogram_width);
    ReadKey(audit, "audit", "abs_gradient", config.audit.abs_gradient);
  }
  if (!(config.histogram_width > 0.0) || config.histogram_width > 2.0) {
    throw Error(ErrorCode::kConfig,
                "config: 'audit.histogram_width' must be in (0, 2]");
  }

  if (!root.contains("output")) {
    throw Error(ErrorCode::kConfig, "config: missing 'output' section");
  }
  const ordered_json& output = root["output"];
  CheckKeys(output, "output", {"directory"});
  if (!output.contains("directory") || !output["directory"].is_string()) {
    throw Error(ErrorCode::kConfig, "config: 'output.directory' must be a path");
  }
  config.output_dir = Resolve(base_dir, output["directory"].get<std::string>());

  // vocab_size is only known once the vocabulary is built, so validate with a
  // placeholder that passes.
  ModelConfig probe = config.model;
  probe.vocab_size = std::max<uint32_t>(probe.vocab_size, 2);
  probe.Validate();
  config.train.Validate();
  return config;
}

RunConfig LoadRunConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kConfig,
                fmt::format("config: cannot read '{}'", path.string()));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseRunConfig(buffer.str(), fs::absolute(path).parent_path());
}

ordered_json RunConfigToJson(const RunConfig& config) {
  ordered_json root;
  ordered_json data;
  if (config.data.synthetic) {
    data["synthetic"] = SyntheticSpecToJson(*config.data.synthetic);
  } else if (config.data.jsonl) {
    data["jsonl"] = {{"train", config.data.jsonl->train.string()},
                     {"dev", config.data.jsonl->dev.string()},
                     {"test", config.data.jsonl->test.string()}};
  }
  data["vocab_min_count"] = config.data.vocab_min_count;
  data["vocab_max_size"] = config.data.vocab_max_size;
  root["data"] = std::move(data);
  root["model"] = ModelConfigToJson(config.model);
  root["train"] = TrainConfigToJson(config.train);
  root["audit"] = {{"seed", config.audit.seed},
                   {"oracle_cap", config.audit.oracle_cap},
                   {"histogram_width", config.histogram_width},
                   {"abs_gradient", config.audit.abs_gradient}};
  root["output"] = {{"directory", config.output_dir.string()}};
  return root;
}

void OverrideSeeds(RunConfig& config, uint64_t seed) {
  if (config.data.synthetic) config.data.synthetic->seed = seed;
  config.model.seed = seed;
  config.train.seed = seed;
  config.audit.seed = seed;
}

}  // namespace attnaudit
