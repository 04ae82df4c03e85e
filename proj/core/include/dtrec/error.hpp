// Copyright 2026 The dtrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <stdexcept>
#include <string>

namespace dtrec {

// Failure taxonomy. The CLI maps each kind to a distinct exit code:
// config-like errors -> 2, I/O -> 3, compatibility -> 4, numeric -> 5.
enum class ErrorKind {
  kConfig,         // bad configuration value or combination
  kIo,             // file missing / unreadable / unwritable
  kFormat,         // malformed input data beyond tolerance
  kShape,          // dimension or length mismatch
  kVocab,          // unknown or reserved item index
  kOrdering,       // input violates a required ordering
  kDomain,         // value outside the operation's domain
  kDegenerate,     // structurally empty input where content is required
  kNumeric,        // non-finite value encountered
  kCompatibility,  // checkpoint/dataset mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case ErrorKind::kIo:
      case ErrorKind::kFormat:
        return 3;
      case ErrorKind::kCompatibility:
        return 4;
      case ErrorKind::kNumeric:
        return 5;
      default:
        return 2;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dtrec
