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
#include <span>
#include <string>
#include <vector>

#include "evoq/policy.hpp"
#include "evoq/world.hpp"

namespace evoq {

// Raw Pearson correlation (no logistic remapping).
double plcc(std::span<const double> predictions, std::span<const double> truths);

// Spearman correlation: Pearson over midranks.
double srcc(std::span<const double> predictions, std::span<const double> truths);

// 1-based average ranks; tied values share the mean of their positions.
std::vector<double> midranks(std::span<const double> values);

struct MetricReport {
  std::string dataset;
  std::size_t n_images = 0;
  double plcc = 0.0;
  double srcc = 0.0;
  std::string round_tag;
};

enum class WeightedMetric { kPlcc, kSrcc };

double weighted_average(std::span<const MetricReport> reports, WeightedMetric metric);

enum class EstimateMode { kMean, kModeBin, kSampleMean };

double policy_quality_estimate(const PolicyParams& params, const LatentImage& image,
                               EstimateMode mode = EstimateMode::kMean, int k = 32,
                               std::uint64_t seed = 0);

struct RoundMetrics {
  int round = 0;
  std::vector<MetricReport> datasets;
  double wavg_plcc = 0.0;
  double wavg_srcc = 0.0;
};

/// Scores every image with the policy's exact mean and correlates against the
/// latent truth, split into the pristine references and distorted variants
/// (a split with fewer than two images, or a constant one, is skipped).
RoundMetrics evaluate_policy(const PolicyParams& params, const Corpus& corpus, int round);

std::string metrics_json(const RoundMetrics& metrics);
void write_metrics(const RoundMetrics& metrics, const std::filesystem::path& path);
RoundMetrics read_metrics(const std::filesystem::path& path);

/// Plain-text table: one row per dataset plus the weighted average, one
/// column pair (PLCC, SRCC) per round, with percentage change over the first.
std::string render_report(std::span<const RoundMetrics> rounds);

}  // namespace evoq
