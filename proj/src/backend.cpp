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

#include "evoq/backend.hpp"

#include "evoq/error.hpp"
#include "evoq/seed.hpp"

namespace evoq {

std::vector<Vote> InProcessBackend::compare(const ImageRef& first, const ImageRef& second,
                                            int k, std::uint64_t seed) {
  if (k < 0) fail(ErrorKind::kEmptyBudget, "negative comparison budget");
  Engine rng = make_engine(seed);
  std::vector<Vote> votes;
  votes.reserve(static_cast<std::size_t>(k));
  for (int q = 0; q < k; ++q)
    votes.push_back(evoq::compare(*snapshot_.params, first.features, second.features,
                                  position_bias_, rng()));
  return votes;
}

ScoreDraws InProcessBackend::sample_scores(const ImageRef& image, int k, std::uint64_t seed) {
  const auto samples = evoq::sample_scores(*snapshot_.params, image.features, k, seed, snapshot_.tag);
  ScoreDraws out;
  out.log_probs.emplace();
  for (const auto& s : samples) {
    out.scores.push_back(s.score);
    out.bins.push_back(s.bin);
    out.log_probs->push_back(s.log_prob);
  }
  return out;
}

}  // namespace evoq
