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

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "evoq/backend.hpp"
#include "evoq/policy.hpp"
#include "evoq/world.hpp"

namespace evoq {

struct VoteTally {
  std::pair<int, int> pair;
  int k_x = 0;  // votes for pair.first being better
  int k_y = 0;  // votes for pair.second being better
  int k = 0;    // effective budget, k_x + k_y
  int discarded = 0;  // invalid or timed-out answers
  int flips = 0;      // queries presented in swapped order
};

struct PseudoLabel {
  std::pair<int, int> pair;
  double p_star = 0.5;  // exactly 0, 0.5 or 1
};

PseudoLabel tally_to_label(const VoteTally& tally);

/// K comparison queries on (i, j). Each query independently presents the pair
/// swapped with probability 1/2 when `permute` is set; votes are mapped back
/// to the canonical (i, j) orientation before tallying.
VoteTally vote_on_pair(PolicyBackend& backend, const ImageRef& image_i,
                       const ImageRef& image_j, int k, std::uint64_t seed,
                       bool permute = true);

VoteTally vote_on_pair(const PolicySnapshot& policy, const LatentImage& image_i,
                       const LatentImage& image_j, int k, double position_bias,
                       std::uint64_t seed, bool permute = true);

struct OfflineOptions {
  int k = 32;
  bool permute = true;
  // Worker threads; only used when the backend allows concurrent calls.
  int n_threads = 1;
};

struct OfflineResult {
  std::vector<PseudoLabel> labels;
  std::vector<VoteTally> tallies;
};

/// Votes every pair of `pairs` (in order). Pair n draws from the seed derived
/// under label "pair/<n>", so the output does not depend on scheduling.
OfflineResult run_offline_stage(PolicyBackend& backend, const Corpus& corpus,
                                const PairSet& pairs, std::uint64_t seed,
                                const OfflineOptions& options);

void write_vote_log(const std::vector<VoteTally>& tallies, const std::filesystem::path& path);
void write_pseudo_labels(const std::vector<PseudoLabel>& labels,
                         const std::filesystem::path& path);
std::vector<PseudoLabel> read_pseudo_labels(const std::filesystem::path& path);

}  // namespace evoq
