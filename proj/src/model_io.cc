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

// Versioned JSON model files.

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "attnaudit/error.h"
#include "attnaudit/models.h"
#include "attnaudit/run_config.h"
#include "fmt/format.h"
#include "json.hpp"

namespace attnaudit {

using nlohmann::ordered_json;

namespace {

void AppendRow(std::string& out, std::span<const double> row) {
  out += '[';
  for (size_t i = 0; i < row.size(); ++i) {
    if (i > 0) out += ',';
    // 17 significant digits round-trip every finite double exactly.
    out += fmt::format("{:.17g}", row[i]);
  }
  out += ']';
}

Tensor ReadTensor(const ordered_json& value, const ParamSpec& spec) {
  auto mismatch = [&](const std::string& got) {
    return Error(ErrorCode::kShapeMismatch,
                 fmt::format("model file: tensor '{}' has shape {}, expected "
                             "{}x{}",
                             spec.name, got, spec.rows, spec.cols));
  };
  if (!value.is_array()) {
    throw Error(ErrorCode::kMalformedFile,
                fmt::format("model file: tensor '{}' is not an array",
                            spec.name));
  }
  std::vector<double> flat;
  flat.reserve(spec.rows * spec.cols);
  auto read_number = [&](const ordered_json& x) {
    if (!x.is_number()) {
      throw Error(ErrorCode::kMalformedFile,
                  fmt::format("model file: tensor '{}' holds a non-number",
                              spec.name));
    }
    flat.push_back(x.get<double>());
  };
  if (spec.is_vector) {
    if (value.size() != spec.rows) {
      throw mismatch(fmt::format("[{}]", value.size()));
    }
    for (const auto& x : value) read_number(x);
  } else {
    if (value.size() != spec.rows) {
      throw mismatch(fmt::format("{}x?", value.size()));
    }
    for (const auto& row : value) {
      if (!row.is_array()) {
        throw Error(ErrorCode::kMalformedFile,
                    fmt::format("model file: tensor '{}' rows must be arrays",
                                spec.name));
      }
      if (row.size() != spec.cols) {
        throw mismatch(fmt::format("{}x{}", value.size(), row.size()));
      }
      for (const auto& x : row) read_number(x);
    }
  }
  return Tensor::Matrix(spec.rows, spec.cols, std::move(flat));
}

}  // namespace

std::string SerializeModel(const Model& model) {
  std::string out = fmt::format("{{\"format_version\":{},\"config\":{},",
                                kModelFormatVersion,
                                ModelConfigToJson(model.config).dump());
  out += "\"tensors\":{";
  const std::vector<ParamSpec> specs = ParamSpecs(model.config);
  size_t next = 0;
  VisitParams(
      model.config,
      [&](const std::string& name, const Tensor& t) {
        const ParamSpec& spec = specs.at(next++);
        if (next > 1) out += ',';
        out += fmt::format("\n\"{}\":", name);
        if (spec.is_vector) {
          AppendRow(out, t.values());
          return;
        }
        out += '[';
        for (size_t r = 0; r < t.rows(); ++r) {
          if (r > 0) out += ',';
          AppendRow(out, t.row(r));
        }
        out += ']';
      },
      model.params);
  out += "}}\n";
  return out;
}

void SaveModel(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo,
                fmt::format("cannot write model to '{}'", path.string()));
  }
  out << SerializeModel(model);
  if (!out) {
    throw Error(ErrorCode::kIo,
                fmt::format("short write to '{}'", path.string()));
  }
}

Model ParseModel(std::string_view text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw Error(ErrorCode::kMalformedFile,
                fmt::format("model file: {}", e.what()));
  }
  if (!root.is_object() || !root.contains("format_version") ||
      !root["format_version"].is_number_integer()) {
    throw Error(ErrorCode::kMalformedFile,
                "model file: missing integer 'format_version'");
  }
  const int version = root["format_version"].get<int>();
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                fmt::format("model file: format_version {} (supported: {})",
                            version, kModelFormatVersion));
  }
  if (!root.contains("config") || !root.contains("tensors") ||
      !root["tensors"].is_object()) {
    throw Error(ErrorCode::kMalformedFile,
                "model file: needs 'config' and 'tensors' objects");
  }
  Model model;
  try {
    model.config = ModelConfigFromJson(root["config"]);
    model.config.Validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kMalformedFile,
                fmt::format("model file: bad config: {}", e.what()));
  }
  const std::vector<ParamSpec> specs = ParamSpecs(model.config);
  const ordered_json& tensors = root["tensors"];
  if (tensors.size() != specs.size()) {
    for (const auto& [name, value] : tensors.items()) {
      const bool known =
          std::any_of(specs.begin(), specs.end(),
                      [&](const ParamSpec& s) { return s.name == name; });
      if (!known) {
        throw Error(ErrorCode::kMalformedFile,
                    fmt::format("model file: unexpected tensor '{}'", name));
      }
    }
  }
  size_t next = 0;
  VisitParams(
      model.config,
      [&](const std::string& name, Tensor& t) {
        const ParamSpec& spec = specs.at(next++);
        auto it = tensors.find(name);
        if (it == tensors.end()) {
          throw Error(ErrorCode::kMalformedFile,
                      fmt::format("model file: missing tensor '{}'", name));
        }
        t = ReadTensor(*it, spec);
        if (!t.AllFinite()) {
          throw Error(ErrorCode::kMalformedFile,
                      fmt::format("model file: tensor '{}' is not finite",
                                  name));
        }
      },
      model.params);
  return model;
}

Model LoadModel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo,
                fmt::format("cannot read model '{}'", path.string()));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseModel(buffer.str());
}

}  // namespace attnaudit
