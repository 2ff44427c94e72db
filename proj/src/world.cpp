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

#include "evoq/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "evoq/error.hpp"
#include "evoq/seed.hpp"

namespace evoq {

using nlohmann::json;

void WorldConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) fail(ErrorKind::kConfig, std::string("world.") + name + " must be positive");
  };
  positive(n_references, "n_references");
  positive(variants_per_reference, "variants_per_reference");
  positive(n_distortion_types, "n_distortion_types");
  positive(n_severity_levels, "n_severity_levels");
  positive(feature_dim, "feature_dim");
  if (!(feature_bandwidth > 0.0) || !std::isfinite(feature_bandwidth))
    fail(ErrorKind::kConfig, "world.feature_bandwidth must be positive");
  if (!(feature_noise_sigma >= 0.0) || !std::isfinite(feature_noise_sigma))
    fail(ErrorKind::kConfig, "world.feature_noise_sigma must be a finite value >= 0");
  if (variants_per_reference > n_distortion_types)
    fail(ErrorKind::kConfig,
         "world.variants_per_reference cannot exceed world.n_distortion_types "
         "(each variant uses a distinct distortion type)");
  if (static_cast<int>(quality_drop_per_severity.size()) != n_severity_levels)
    fail(ErrorKind::kConfig,
         "world.quality_drop_per_severity needs one entry per severity level");
  for (std::size_t s = 0; s < quality_drop_per_severity.size(); ++s) {
    const double drop = quality_drop_per_severity[s];
    if (!std::isfinite(drop) || drop < 0.0)
      fail(ErrorKind::kConfig, "world.quality_drop_per_severity entries must be >= 0");
    if (s > 0 && drop < quality_drop_per_severity[s - 1])
      fail(ErrorKind::kConfig, "world.quality_drop_per_severity must be nondecreasing");
  }
}

const LatentImage& Corpus::at(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= images.size())
    fail(ErrorKind::kLookup, "unknown image id " + std::to_string(id));
  return images[static_cast<std::size_t>(id)];
}

std::vector<int> Corpus::reference_ids() const {
  std::vector<int> ids;
  for (const auto& img : images)
    if (img.is_reference()) ids.push_back(img.id);
  return ids;
}

std::vector<double> quality_embedding(double quality, int feature_dim, double bandwidth) {
  std::vector<double> out(static_cast<std::size_t>(feature_dim));
  if (feature_dim == 1) {
    out[0] = (quality - kMinQuality) / (kMaxQuality - kMinQuality);
    return out;
  }
  const double spacing = (kMaxQuality - kMinQuality) / (feature_dim - 1);
  for (int j = 0; j < feature_dim; ++j) {
    const double center = kMinQuality + spacing * j;
    const double z = (quality - center) / (spacing * bandwidth);
    out[static_cast<std::size_t>(j)] = std::exp(-0.5 * z * z);
  }
  return out;
}

double variant_quality(const WorldConfig& config, double parent_quality, int severity) {
  if (severity < 1 || severity > static_cast<int>(config.quality_drop_per_severity.size()))
    fail(ErrorKind::kLookup, "severity " + std::to_string(severity) + " outside the drop schedule");
  return std::clamp(parent_quality - config.quality_drop_per_severity[static_cast<std::size_t>(severity - 1)],
                    kMinQuality, kMaxQuality);
}

Corpus generate_corpus(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  const SeedDerivation seeds(seed);
  Engine quality_rng = make_engine(seeds.derive("world/reference_quality"));
  Engine distortion_rng = make_engine(seeds.derive("world/distortions"));
  Engine noise_rng = make_engine(seeds.derive("world/feature_noise"));
  std::normal_distribution<double> noise(0.0, 1.0);

  Corpus corpus;
  corpus.seed = seed;
  corpus.config = config;
  const int per_lineage = 1 + config.variants_per_reference;
  corpus.images.reserve(static_cast<std::size_t>(config.n_references) * per_lineage);

  auto embed = [&](LatentImage& img) {
    img.features = quality_embedding(img.true_quality, config.feature_dim, config.feature_bandwidth);
    if (config.feature_noise_sigma > 0.0)
      for (double& f : img.features) f += config.feature_noise_sigma * noise(noise_rng);
  };

  std::vector<int> types(static_cast<std::size_t>(config.n_distortion_types));
  for (int r = 0; r < config.n_references; ++r) {
    LatentImage ref;
    ref.id = static_cast<int>(corpus.images.size());
    ref.true_quality = 2.5 + 2.5 * uniform01(quality_rng);
    embed(ref);
    const int ref_id = ref.id;
    const double ref_quality = ref.true_quality;
    corpus.images.push_back(std::move(ref));

    // Distinct distortion types per reference: partial Fisher-Yates.
    std::iota(types.begin(), types.end(), 0);
    for (int v = 0; v < config.variants_per_reference; ++v) {
      const auto pick = static_cast<std::size_t>(v) +
                        uniform_index(distortion_rng, types.size() - static_cast<std::size_t>(v));
      std::swap(types[static_cast<std::size_t>(v)], types[pick]);
      const int severity =
          1 + static_cast<int>(uniform_index(distortion_rng, static_cast<std::uint64_t>(config.n_severity_levels)));
      LatentImage var;
      var.id = static_cast<int>(corpus.images.size());
      var.reference_id = ref_id;
      var.distortion_type = types[static_cast<std::size_t>(v)];
      var.severity = severity;
      var.true_quality = variant_quality(config, ref_quality, severity);
      embed(var);
      corpus.images.push_back(std::move(var));
    }
  }
  return corpus;
}

std::string_view to_string(PairMode mode) {
  return mode == PairMode::kSameReference ? "same_reference" : "unrestricted";
}

PairMode parse_pair_mode(std::string_view text) {
  if (text == "unrestricted") return PairMode::kUnrestricted;
  if (text == "same_reference") return PairMode::kSameReference;
  fail(ErrorKind::kConfig, "unknown pair mode '" + std::string(text) + "'");
}

PairSet sample_pairs(const Corpus& corpus, std::size_t n_pairs, PairMode mode,
                     std::uint64_t seed, PairPool pool) {
  if (corpus.images.empty()) fail(ErrorKind::kInfeasibleSampling, "empty corpus");
  PairSet out;
  out.mode = mode;
  out.seed = seed;
  out.n_images = corpus.size();
  out.pairs.reserve(n_pairs);
  Engine rng = make_engine(seed);

  auto eligible = [&](const LatentImage& img) {
    return pool == PairPool::kAll || img.is_reference();
  };

  if (mode == PairMode::kUnrestricted) {
    std::vector<int> ids;
    for (const auto& img : corpus.images)
      if (eligible(img)) ids.push_back(img.id);
    if (ids.size() < 2)
      fail(ErrorKind::kInfeasibleSampling, "need at least two eligible images to form a pair");
    const auto n = static_cast<std::uint64_t>(ids.size());
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const auto a = uniform_index(rng, n);
      auto b = uniform_index(rng, n - 1);
      if (b >= a) ++b;
      out.pairs.emplace_back(ids[a], ids[b]);
    }
    return out;
  }

  // Group eligible images by lineage; only lineages with >= 2 members can
  // host a pair. Lineages are drawn proportionally to their ordered-pair
  // count so every eligible ordered pair is equally likely.
  std::vector<std::vector<int>> lineages(corpus.size());
  for (const auto& img : corpus.images)
    if (eligible(img)) lineages[static_cast<std::size_t>(img.lineage())].push_back(img.id);
  std::vector<const std::vector<int>*> usable;
  std::vector<std::uint64_t> cumulative;
  std::uint64_t total = 0;
  for (const auto& members : lineages) {
    if (members.size() < 2) continue;
    total += members.size() * (members.size() - 1);
    usable.push_back(&members);
    cumulative.push_back(total);
  }
  if (usable.empty())
    fail(ErrorKind::kInfeasibleSampling,
         "same_reference sampling needs a lineage with at least two members");
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const auto ticket = uniform_index(rng, total);
    const auto which = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), ticket) - cumulative.begin());
    const auto& members = *usable[which];
    const auto n = static_cast<std::uint64_t>(members.size());
    const auto a = uniform_index(rng, n);
    auto b = uniform_index(rng, n - 1);
    if (b >= a) ++b;
    out.pairs.emplace_back(members[a], members[b]);
  }
  return out;
}

std::set<int> pairings_of(const PairSet& pairset, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= pairset.n_images)
    fail(ErrorKind::kLookup, "unknown image id " + std::to_string(id));
  std::set<int> partners;
  for (const auto& [i, j] : pairset.pairs) {
    if (i == id) partners.insert(j);
    if (j == id) partners.insert(i);
  }
  return partners;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  return in;
}

json optional_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> read_optional_int(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<int>();
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& img : corpus.images) {
    json rec = {{"id", img.id},
                {"true_quality", img.true_quality},
                {"reference_id", optional_int(img.reference_id)},
                {"distortion_type", optional_int(img.distortion_type)},
                {"severity", optional_int(img.severity)},
                {"features", img.features}};
    out << rec.dump() << '\n';
  }
}

Corpus read_corpus(const std::filesystem::path& path) {
  auto in = open_in(path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      LatentImage img;
      img.id = rec.at("id").get<int>();
      img.true_quality = rec.at("true_quality").get<double>();
      img.reference_id = read_optional_int(rec.at("reference_id"));
      img.distortion_type = read_optional_int(rec.at("distortion_type"));
      img.severity = read_optional_int(rec.at("severity"));
      img.features = rec.at("features").get<std::vector<double>>();
      if (img.id != static_cast<int>(corpus.images.size()))
        fail(ErrorKind::kIo, "ids must be dense and ordered from 0");
      corpus.images.push_back(std::move(img));
    } catch (const json::exception& e) {
      fail(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& img : corpus.images)
    if (img.reference_id) corpus.at(*img.reference_id);
  if (!corpus.images.empty())
    corpus.config.feature_dim = static_cast<int>(corpus.images.front().features.size());
  return corpus;
}

void write_pairs(const PairSet& pairs, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& [i, j] : pairs.pairs) out << '[' << i << ',' << j << "]\n";
}

PairSet read_pairs(const std::filesystem::path& path, std::size_t n_images) {
  auto in = open_in(path);
  PairSet set;
  set.n_images = n_images;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = json::parse(line).get<std::vector<int>>();
      if (rec.size() != 2) fail(ErrorKind::kIo, "pair must have two ids");
      for (int id : rec)
        if (id < 0 || static_cast<std::size_t>(id) >= n_images)
          fail(ErrorKind::kLookup, "pair references unknown id " + std::to_string(id));
      set.pairs.emplace_back(rec[0], rec[1]);
    } catch (const json::exception& e) {
      fail(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

}  // namespace evoq
