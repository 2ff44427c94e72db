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
#include <optional>
#include <set>
#include <string_view>
#include <utility>
#include <vector>

namespace evoq {

struct WorldConfig {
  int n_references = 200;
  int variants_per_reference = 10;
  int n_distortion_types = 35;
  int n_severity_levels = 5;
  int feature_dim = 8;
  // Bump bandwidth in units of the grid spacing.
  double feature_bandwidth = 2.0;
  double feature_noise_sigma = 0.25;
  // Quality lost at severity s is quality_drop_per_severity[s - 1].
  std::vector<double> quality_drop_per_severity{0.2, 0.5, 1.0, 1.8, 2.8};

  void validate() const;
};

inline constexpr double kMinQuality = 1.0;
inline constexpr double kMaxQuality = 5.0;

struct LatentImage {
  int id = 0;
  // Hidden ground truth. Only the eval module may read it.
  double true_quality = 0.0;
  std::optional<int> reference_id;
  std::optional<int> distortion_type;
  std::optional<int> severity;
  std::vector<double> features;

  bool is_reference() const { return !reference_id.has_value(); }
  // The pristine parent id, or this image's own id for references.
  int lineage() const { return reference_id.value_or(id); }
};

struct Corpus {
  std::vector<LatentImage> images;
  std::uint64_t seed = 0;
  WorldConfig config;

  const LatentImage& at(int id) const;
  std::size_t size() const { return images.size(); }
  std::vector<int> reference_ids() const;
};

/// Radial-bump embedding of a quality value: feature_dim Gaussian bumps on an
/// even grid over [1, 5], bandwidth given in grid spacings.
std::vector<double> quality_embedding(double quality, int feature_dim, double bandwidth = 1.0);

/// Latent quality of a variant: parent minus the severity's drop, clamped to
/// [1, 5]. Severity is 1-based.
double variant_quality(const WorldConfig& config, double parent_quality, int severity);

Corpus generate_corpus(const WorldConfig& config, std::uint64_t seed);

enum class PairMode { kUnrestricted, kSameReference };
// Which images are eligible for pairing.
enum class PairPool { kAll, kReferences };

std::string_view to_string(PairMode mode);
PairMode parse_pair_mode(std::string_view text);

struct PairSet {
  std::vector<std::pair<int, int>> pairs;
  PairMode mode = PairMode::kUnrestricted;
  std::uint64_t seed = 0;
  // Size of the id universe the pairs index into.
  std::size_t n_images = 0;
};

/// Draws n_pairs ordered pairs uniformly (with replacement over the pair
/// space, never a self-pair). In same-reference mode both members belong to
/// one lineage: a reference together with its distorted variants.
PairSet sample_pairs(const Corpus& corpus, std::size_t n_pairs, PairMode mode,
                     std::uint64_t seed, PairPool pool = PairPool::kAll);

std::set<int> pairings_of(const PairSet& pairset, int id);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);
void write_pairs(const PairSet& pairs, const std::filesystem::path& path);
PairSet read_pairs(const std::filesystem::path& path, std::size_t n_images);

}  // namespace evoq
