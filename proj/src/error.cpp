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

#include "evoq/error.hpp"

namespace evoq {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kLookup: return "lookup error";
    case ErrorKind::kInfeasibleSampling: return "infeasible sampling";
    case ErrorKind::kEmptyBudget: return "empty budget";
    case ErrorKind::kExcludedImage: return "excluded image";
    case ErrorKind::kGroupTooSmall: return "group too small";
    case ErrorKind::kDivergedPolicy: return "diverged policy";
    case ErrorKind::kDegenerateSupport: return "degenerate support";
    case ErrorKind::kBatchShape: return "batch shape error";
    case ErrorKind::kNumericalFailure: return "numerical failure";
    case ErrorKind::kUndefinedCorrelation: return "undefined correlation";
    case ErrorKind::kProtocol: return "protocol error";
    case ErrorKind::kTimeout: return "timeout";
    case ErrorKind::kSessionAborted: return "session aborted";
    case ErrorKind::kIo: return "i/o error";
  }
  return "unknown error";
}

}  // namespace evoq
