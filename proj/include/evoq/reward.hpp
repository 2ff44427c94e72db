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

#include <span>
#include <utility>
#include <vector>

namespace evoq {

struct RewardConfig {
  // Keeps the comparative-probability denominator away from zero.
  double gamma = 1e-6;
  // Lower bound on the group std used when standardizing rewards.
  double std_floor = 1e-8;

  void validate() const;
};

/// K sampled scores for one image with their population moments.
struct ScoreGroup {
  int image_id = 0;
  std::vector<double> scores;
  double mean = 0.0;
  double variance = 0.0;

  static ScoreGroup of(int image_id, std::vector<double> scores);
};

double gaussian_cdf(double z);

/// Thurstone win probability of sample q_k_i (drawn for image i) over image j:
/// Phi((q - mean_j) / sqrt(var_i + var_j + gamma)).
double comparative_probability(double q_k_i, const ScoreGroup& group_i,
                               const ScoreGroup& group_j, const RewardConfig& config);

struct LabelledProbability {
  double p_star = 0.5;
  double p_k = 0.5;
};

double fidelity_term(double p_star, double p_k);

/// Mean fidelity sqrt(p* p) + sqrt((1-p*)(1-p)) over an image's pairings.
/// Duplicate pairings contribute one term each.
double fidelity_reward(std::span<const LabelledProbability> terms);

/// Group-standardized rewards. A constant group yields all zeros.
std::vector<double> advantages(std::span<const double> rewards, const RewardConfig& config);

/// Per-sample fidelity terms for both members of a labelled pair: image i
/// keeps (p*, p_k(i, j)); image j uses the swapped label 1 - p* with
/// p_k(j, i).
struct PairTerms {
  std::vector<double> terms_i;
  std::vector<double> terms_j;
};

PairTerms swap_rewards(double p_star, const ScoreGroup& group_i, const ScoreGroup& group_j,
                       const RewardConfig& config);

}  // namespace evoq
