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

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "evoq/error.hpp"
#include "evoq/world.hpp"
#include "oracles.hpp"

using namespace evoq;

namespace {

WorldConfig small_world(int refs) {
  WorldConfig c;
  c.n_references = refs;
  return c;
}

}  // namespace

TEST_CASE("one reference yields a lineage of eleven") {
  const Corpus c = generate_corpus(small_world(1), 7);
  REQUIRE(c.size() == 11);
  int children = 0;
  for (const auto& img : c.images)
    if (img.reference_id && *img.reference_id == 0) ++children;
  CHECK(children == 10);
  CHECK(c.images[0].is_reference());
}

TEST_CASE("corpus shape, ids and latent ranges") {
  const Corpus c = generate_corpus(small_world(50), 11);
  REQUIRE(c.size() == 50 * 11);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& img = c.images[i];
    CHECK(img.id == static_cast<int>(i));
    CHECK(img.features.size() == 8);
    for (double f : img.features) CHECK(std::isfinite(f));
    if (img.is_reference()) {
      CHECK(img.true_quality >= 2.5);
      CHECK(img.true_quality <= 5.0);
    } else {
      const auto& parent = c.at(*img.reference_id);
      CHECK(parent.is_reference());
      CHECK(img.true_quality <= parent.true_quality);
      CHECK(img.true_quality >= 1.0);
      CHECK(*img.distortion_type >= 0);
      CHECK(*img.distortion_type < 35);
      CHECK(*img.severity >= 1);
      CHECK(*img.severity <= 5);
      CHECK(img.true_quality == doctest::Approx(std::max(1.0, parent.true_quality -
                                                                  c.config.quality_drop_per_severity[*img.severity - 1])).epsilon(1e-15));
    }
  }
}

TEST_CASE("variants of one reference use distinct distortion types") {
  const Corpus c = generate_corpus(small_world(30), 5);
  std::map<int, std::set<int>> types;
  std::map<int, int> count;
  for (const auto& img : c.images)
    if (!img.is_reference()) {
      types[*img.reference_id].insert(*img.distortion_type);
      ++count[*img.reference_id];
    }
  for (const auto& [ref, t] : types) CHECK(static_cast<int>(t.size()) == count[ref]);
}

TEST_CASE("severity clamp at the lower bound") {
  const WorldConfig c;
  CHECK(variant_quality(c, 3.0, 5) == 1.0);
  CHECK(variant_quality(c, 4.5, 1) == doctest::Approx(4.3).epsilon(1e-15));
  CHECK(variant_quality(c, 4.0, 3) == 3.0);
  CHECK_THROWS_AS(variant_quality(c, 4.0, 6), Error);
}

TEST_CASE("monotone distortion: quality nonincreasing in severity") {
  const WorldConfig c;
  for (double parent = 2.5; parent <= 5.0; parent += 0.05)
    for (int s = 1; s < 5; ++s) CHECK(variant_quality(c, parent, s + 1) <= variant_quality(c, parent, s));
}

TEST_CASE("zero noise: equal quality gives equal features, distinct quality distinct features") {
  WorldConfig cfg = small_world(40);
  cfg.feature_noise_sigma = 0.0;
  const Corpus c = generate_corpus(cfg, 3);
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const bool same_q = c.images[i].true_quality == c.images[j].true_quality;
      const bool same_f = c.images[i].features == c.images[j].features;
      CHECK(same_q == same_f);
    }
  CHECK(quality_embedding(3.0, 8, 2.0) == quality_embedding(3.0, 8, 2.0));
}

TEST_CASE("generate_corpus is a pure function of config and seed") {
  const auto a = generate_corpus(small_world(20), 99);
  const auto b = generate_corpus(small_world(20), 99);
  const auto d = generate_corpus(small_world(20), 100);
  REQUIRE(a.size() == b.size());
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    all_equal &= a.images[i].features == b.images[i].features &&
                 a.images[i].true_quality == b.images[i].true_quality;
    any_diff |= a.images[i].true_quality != d.images[i].true_quality;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("invalid world configs are rejected") {
  WorldConfig c;
  c.n_references = 0;
  CHECK_THROWS_AS(generate_corpus(c, 1), Error);
  c = WorldConfig{};
  c.feature_noise_sigma = -0.1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = WorldConfig{};
  c.quality_drop_per_severity = {0.5, 0.2, 1.0, 1.8, 2.8};
  CHECK_THROWS_AS(c.validate(), Error);
  c = WorldConfig{};
  c.variants_per_reference = 36;
  CHECK_THROWS_AS(c.validate(), Error);
  try {
    c.validate();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
}

TEST_CASE("same_reference pairs stay inside the lineage") {
  const Corpus c = generate_corpus(small_world(1), 7);
  const PairSet p = sample_pairs(c, 3, PairMode::kSameReference, 1);
  CHECK(p.pairs.size() == 3);
  for (const auto& [i, j] : p.pairs) {
    CHECK(i != j);
    CHECK(c.at(i).lineage() == 0);
    CHECK(c.at(j).lineage() == 0);
  }

  const Corpus big = generate_corpus(small_world(25), 2);
  for (const auto& [i, j] : sample_pairs(big, 2000, PairMode::kSameReference, 4).pairs)
    CHECK(big.at(i).lineage() == big.at(j).lineage());
}

TEST_CASE("unrestricted sampling: count, no self pairs, determinism") {
  const Corpus c = generate_corpus(small_world(200), 7);
  const PairSet p = sample_pairs(c, 20000, PairMode::kUnrestricted, 5);
  CHECK(p.pairs.size() == 20000);
  for (const auto& [i, j] : p.pairs) REQUIRE(i != j);
  CHECK(sample_pairs(c, 20000, PairMode::kUnrestricted, 5).pairs == p.pairs);
  CHECK(sample_pairs(c, 20000, PairMode::kUnrestricted, 6).pairs != p.pairs);
}

TEST_CASE("reference pool only pairs references") {
  const Corpus c = generate_corpus(small_world(20), 7);
  for (const auto& [i, j] : sample_pairs(c, 500, PairMode::kUnrestricted, 5, PairPool::kReferences).pairs) {
    CHECK(c.at(i).is_reference());
    CHECK(c.at(j).is_reference());
  }
  CHECK_THROWS_AS(sample_pairs(c, 5, PairMode::kSameReference, 5, PairPool::kReferences), Error);
}

TEST_CASE("unrestricted sampling is uniform over ordered pairs") {
  WorldConfig cfg;
  cfg.n_references = 1;
  cfg.variants_per_reference = 3;
  const Corpus c = generate_corpus(cfg, 1);  // 4 images, 12 ordered pairs
  const int n = 60000;
  std::map<std::pair<int, int>, int> freq;
  for (const auto& pr : sample_pairs(c, n, PairMode::kUnrestricted, 8).pairs) ++freq[pr];
  CHECK(freq.size() == 12);
  const double p = 1.0 / 12;
  for (const auto& [pr, f] : freq) CHECK(std::fabs(f - n * p) < 4 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("same_reference sampling is uniform over eligible ordered pairs") {
  // Lineages of different sizes: uniformity over pairs means lineages are hit
  // in proportion to m(m-1).
  WorldConfig cfg;
  cfg.n_references = 2;
  cfg.variants_per_reference = 2;
  Corpus c = generate_corpus(cfg, 1);  // two lineages of 3
  // Turn one variant of lineage 1 into its own reference-less singleton lineage.
  c.images[5].reference_id.reset();
  const int n = 40000;
  std::map<std::pair<int, int>, int> freq;
  for (const auto& pr : sample_pairs(c, n, PairMode::kSameReference, 3).pairs) ++freq[pr];
  // Lineage 0 has 3 members (6 pairs), lineage 3 has 2 (2 pairs): 8 pairs total.
  CHECK(freq.size() == 8);
  const double p = 1.0 / 8;
  for (const auto& [pr, f] : freq) CHECK(std::fabs(f - n * p) < 4 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("same_reference with no eligible lineage fails") {
  WorldConfig cfg;
  cfg.n_references = 3;
  Corpus c = generate_corpus(cfg, 1);
  std::vector<LatentImage> refs;
  for (const auto& img : c.images)
    if (img.is_reference()) refs.push_back(img);
  for (std::size_t i = 0; i < refs.size(); ++i) refs[i].id = static_cast<int>(i);
  c.images = refs;
  try {
    sample_pairs(c, 4, PairMode::kSameReference, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasibleSampling);
  }
}

TEST_CASE("pairings_of enumerates partners") {
  PairSet p;
  p.n_images = 3;
  p.pairs = {{0, 1}, {2, 0}};
  CHECK(pairings_of(p, 0) == std::set<int>{1, 2});
  p.pairs = {{1, 2}};
  CHECK(pairings_of(p, 0).empty());
  p.pairs = {{0, 1}, {0, 1}};
  CHECK(pairings_of(p, 0) == std::set<int>{1});
  try {
    pairings_of(p, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kLookup);
  }
}

TEST_CASE("corpus and pairs round-trip through files") {
  const auto dir = oracle::scratch_dir("world_io");
  const Corpus c = generate_corpus(small_world(5), 4);
  write_corpus(c, dir / "corpus.jsonl");
  const Corpus back = read_corpus(dir / "corpus.jsonl");
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back.images[i].features == c.images[i].features);
    CHECK(back.images[i].true_quality == c.images[i].true_quality);
    CHECK(back.images[i].reference_id == c.images[i].reference_id);
    CHECK(back.images[i].severity == c.images[i].severity);
  }
  const PairSet p = sample_pairs(c, 40, PairMode::kSameReference, 2);
  write_pairs(p, dir / "pairs.jsonl");
  CHECK(read_pairs(dir / "pairs.jsonl", c.size()).pairs == p.pairs);
  CHECK_THROWS_AS(read_pairs(dir / "pairs.jsonl", 3), Error);
}
