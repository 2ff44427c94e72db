// Copyright 2026 The evoq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evoq {

enum class ErrorKind {
  kConfig,
  kShape,
  kLookup,
  kInfeasibleSampling,
  kEmptyBudget,
  kExcludedImage,
  kGroupTooSmall,
  kDivergedPolicy,
  kDegenerateSupport,
  kBatchShape,
  kNumericalFailure,
  kUndefinedCorrelation,
  kProtocol,
  kTimeout,
  kSessionAborted,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure the engine reports carries a kind so callers (and tests) can
// branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace evoq
