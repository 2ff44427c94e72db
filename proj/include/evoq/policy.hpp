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

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evoq {

/// Discretized score space: n_bins evenly spaced centers on
/// [min_score, max_score], each rounded to two decimals.
struct QualityScale {
  double min_score = 1.0;
  double max_score = 5.0;
  int n_bins = 17;

  void validate() const;
  double center(int bin) const;
  std::vector<double> centers() const;
  bool valid_bin(int bin) const { return bin >= 0 && bin < n_bins; }
};

struct PolicyParams {
  Eigen::MatrixXd weights;  // n_bins x d
  Eigen::VectorXd biases;   // n_bins
  QualityScale scale;

  static PolicyParams zeros(const QualityScale& scale, int feature_dim);

  int n_bins() const { return static_cast<int>(biases.size()); }
  int feature_dim() const { return static_cast<int>(weights.cols()); }
  bool all_finite() const { return weights.allFinite() && biases.allFinite(); }
};

enum class PolicyRole { kCurrent, kOld, kReference };

std::string_view to_string(PolicyRole role);
PolicyRole parse_policy_role(std::string_view text);

/// Immutable deep copy of a parameter set. Later changes to the params a
/// snapshot was taken from never show through.
struct PolicySnapshot {
  PolicyRole role = PolicyRole::kCurrent;
  std::shared_ptr<const PolicyParams> params;
  std::string tag;

  static PolicySnapshot take(const PolicyParams& params, PolicyRole role, std::string tag);
};

struct ScoreSample {
  double score = 0.0;
  int bin = 0;
  double log_prob = 0.0;
  std::string snapshot_tag;
};

enum class Vote : int { kFirst = 0, kSecond = 1, kInvalid = -1 };

Eigen::VectorXd log_score_distribution(const PolicyParams& params,
                                       std::span<const double> features);
std::vector<double> score_distribution(const PolicyParams& params,
                                       std::span<const double> features);
double log_prob_of(const PolicyParams& params, std::span<const double> features, int bin);

std::vector<ScoreSample> sample_scores(const PolicyParams& params,
                                       std::span<const double> features, int k,
                                       std::uint64_t seed, std::string_view tag = {});

/// One stochastic score draw per image; position_bias is added to the first
/// image's draw. Exact ties are broken by a fair coin.
Vote compare(const PolicyParams& params, std::span<const double> features_a,
             std::span<const double> features_b, double position_bias,
             std::uint64_t seed);

/// Exact mean of the score distribution.
double expected_score(const PolicyParams& params, std::span<const double> features);

struct PolicyInit {
  // Std of the i.i.d. Gaussian weight noise.
  double weight_std = 0.01;
  // Logit slope of the built-in quality prior. Zero gives a policy with no
  // preference beyond the weight noise.
  double prior_strength = 0.6;
  // Relative magnitude of the random component mixed into the prior's
  // feature read-out direction.
  double prior_contamination = 1.0;

  void validate() const;
};

/// Base policy: near-uniform categorical scorer whose logits lean weakly
/// toward a noisy read-out of the features, standing in for a pretrained
/// model with some, but imperfect, quality perception.
PolicyParams initialize_policy(const QualityScale& scale, int feature_dim,
                               const PolicyInit& init, std::uint64_t seed);

void write_checkpoint(const PolicySnapshot& snapshot, const std::filesystem::path& path);
std::string checkpoint_json(const PolicySnapshot& snapshot);
PolicySnapshot parse_checkpoint(std::string_view text);
PolicySnapshot read_checkpoint(const std::filesystem::path& path);

}  // namespace evoq
