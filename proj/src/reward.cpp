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

#include "evoq/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "evoq/error.hpp"

namespace evoq {

void RewardConfig::validate() const {
  if (!(gamma > 0.0)) fail(ErrorKind::kConfig, "reward.gamma must be positive");
  if (!(std_floor > 0.0)) fail(ErrorKind::kConfig, "reward.std_floor must be positive");
}

ScoreGroup ScoreGroup::of(int image_id, std::vector<double> scores) {
  ScoreGroup g;
  g.image_id = image_id;
  g.scores = std::move(scores);
  if (g.scores.empty()) fail(ErrorKind::kEmptyBudget, "score group is empty");
  double sum = 0.0;
  for (double s : g.scores) sum += s;
  g.mean = sum / static_cast<double>(g.scores.size());
  double ss = 0.0;
  for (double s : g.scores) ss += (s - g.mean) * (s - g.mean);
  g.variance = ss / static_cast<double>(g.scores.size());
  return g;
}

double gaussian_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double comparative_probability(double q_k_i, const ScoreGroup& group_i,
                               const ScoreGroup& group_j, const RewardConfig& config) {
  const double denom = std::sqrt(group_i.variance + group_j.variance + config.gamma);
  return gaussian_cdf((q_k_i - group_j.mean) / denom);
}

double fidelity_term(double p_star, double p_k) {
  return std::sqrt(p_star * p_k) + std::sqrt((1.0 - p_star) * (1.0 - p_k));
}

double fidelity_reward(std::span<const LabelledProbability> terms) {
  if (terms.empty())
    fail(ErrorKind::kExcludedImage, "image has no pairings; it must be excluded upstream");
  double sum = 0.0;
  for (const auto& t : terms) {
    if (t.p_star != 0.0 && t.p_star != 0.5 && t.p_star != 1.0)
      fail(ErrorKind::kLookup, "pseudo-label must be 0, 0.5 or 1");
    if (!(t.p_k >= 0.0 && t.p_k <= 1.0))
      fail(ErrorKind::kNumericalFailure, "comparative probability outside [0, 1]");
    sum += fidelity_term(t.p_star, t.p_k);
  }
  return sum / static_cast<double>(terms.size());
}

std::vector<double> advantages(std::span<const double> rewards, const RewardConfig& config) {
  if (rewards.size() < 2)
    fail(ErrorKind::kGroupTooSmall, "advantages need a group of at least two rewards");
  const auto n = static_cast<double>(rewards.size());
  std::vector<double> out(rewards.size(), 0.0);
  bool constant = true;
  for (double r : rewards) constant = constant && r == rewards.front();
  if (constant) return out;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double sd = std::max(std::sqrt(ss / n), config.std_floor);
  for (std::size_t k = 0; k < rewards.size(); ++k) out[k] = (rewards[k] - mean) / sd;
  return out;
}

PairTerms swap_rewards(double p_star, const ScoreGroup& group_i, const ScoreGroup& group_j,
                       const RewardConfig& config) {
  PairTerms out;
  out.terms_i.reserve(group_i.scores.size());
  out.terms_j.reserve(group_j.scores.size());
  for (double q : group_i.scores)
    out.terms_i.push_back(fidelity_term(p_star, comparative_probability(q, group_i, group_j, config)));
  const double swapped = 1.0 - p_star;
  for (double q : group_j.scores)
    out.terms_j.push_back(fidelity_term(swapped, comparative_probability(q, group_j, group_i, config)));
  return out;
}

}  // namespace evoq
