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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoq/backend.hpp"
#include "evoq/eval.hpp"
#include "evoq/grpo.hpp"
#include "evoq/policy.hpp"
#include "evoq/reward.hpp"
#include "evoq/voting.hpp"
#include "evoq/world.hpp"

namespace evoq {

enum class EvolutionMode { kQuality, kEstimate };

std::string_view to_string(EvolutionMode mode);
EvolutionMode parse_evolution_mode(std::string_view text);

/// Which images a round pairs, and how.
struct PairRegime {
  PairPool pool = PairPool::kReferences;
  PairMode mode = PairMode::kUnrestricted;
};

struct EvolutionConfig {
  int rounds = 2;        // T
  int batches = 100;     // M, per round
  int batch_size = 4;    // B, pairs per batch
  int k = 32;            // voting budget
  int online_k = 0;      // samples per image online; 0 means "same as k"
  std::size_t n_pairs = 2000;
  EvolutionMode mode = EvolutionMode::kQuality;
  double estimate_tolerance = 0.35;
  bool permute = true;
  double position_bias = 0.0;  // builtin policy only
  int n_threads = 1;
  // Round 1 uses regimes[0], round t uses regimes[min(t, size) - 1].
  std::vector<PairRegime> regimes{{PairPool::kReferences, PairMode::kUnrestricted},
                                  {PairPool::kAll, PairMode::kSameReference}};

  int sampling_k() const { return online_k > 0 ? online_k : k; }
  const PairRegime& regime(int round) const;
  void validate() const;
};

/// Everything that determines a run besides the backend and output location.
struct EvolutionSetup {
  WorldConfig world;
  QualityScale scale;
  PolicyInit init;
  EvolutionConfig evolution;
  RewardConfig reward;
  GrpoConfig grpo;
  std::uint64_t master_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct RoundArtifacts {
  int round = 0;
  std::filesystem::path directory;  // empty when not persisted
  RoundMetrics metrics;
  PolicySnapshot checkpoint;
  int completed_batches = 0;
  std::optional<std::string> failure;
  double label_accuracy = 0.0;  // pseudo-label agreement with latent order
};

struct RoundContext {
  const Corpus& corpus;
  const EvolutionSetup& setup;
  int round = 1;
  std::uint64_t round_seed = 0;
  // When set, scoring and voting go through this peer and no optimizer step
  // is taken; advantages are exported instead.
  PolicyBackend* external = nullptr;
  std::filesystem::path directory;  // empty: keep everything in memory
};

/// Offline voting then M online batches, starting from `params` (updated in
/// place). The reference policy is the round-start snapshot.
RoundArtifacts run_round(const RoundContext& ctx, PolicyParams& params);

struct EvolutionResult {
  Corpus corpus;
  RoundMetrics baseline;
  std::vector<RoundArtifacts> rounds;
  PolicyParams final_params;
  std::filesystem::path run_directory;
  std::optional<std::string> failure;
};

EvolutionResult run_evolution(const EvolutionSetup& setup,
                              const std::filesystem::path& output_root = {},
                              PolicyBackend* external = nullptr);

/// Pseudo mean-opinion score per image: average of K direct score draws.
std::map<int, double> evoestimate_offline(PolicyBackend& backend, const Corpus& corpus,
                                          std::span<const int> image_ids, int k,
                                          std::uint64_t seed);

double evoestimate_reward(double q_k, double pseudo_mos, double tolerance);

/// Fraction of labels agreeing with the latent order (ties earn half credit;
/// pairs of equal latent quality are skipped).
double label_accuracy(const Corpus& corpus, std::span<const PseudoLabel> labels);

/// Directory name for a run: "run_" plus a digest prefix of the setup.
std::string run_id(const EvolutionSetup& setup);

}  // namespace evoq
