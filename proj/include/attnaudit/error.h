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

#ifndef ATTNAUDIT_ERROR_H_
#define ATTNAUDIT_ERROR_H_

#include <stdexcept>
#include <string>

namespace attnaudit {

// Broad failure categories. The CLI maps these onto process exit codes.
enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kNonFinite,
  kConfig,
  kData,
  kIo,
  kMalformedFile,
  kVersionMismatch,
  kDivergence,
  kOracleCap,
  kNothingIncluded,
};

const char* ErrorCodeName(ErrorCode code);

// All library failures are reported as this exception. The message starts
// with a short stable tag (e.g. "empty-vector") followed by details.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace attnaudit

#endif  // ATTNAUDIT_ERROR_H_
