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

#include "evoq/voting.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "evoq/error.hpp"
#include "evoq/seed.hpp"

namespace evoq {

using nlohmann::json;

PseudoLabel tally_to_label(const VoteTally& tally) {
  PseudoLabel label{tally.pair, 0.5};
  if (tally.k_x > tally.k_y) label.p_star = 1.0;
  else if (tally.k_x < tally.k_y) label.p_star = 0.0;
  return label;
}

VoteTally vote_on_pair(PolicyBackend& backend, const ImageRef& image_i,
                       const ImageRef& image_j, int k, std::uint64_t seed, bool permute) {
  if (k < 1) fail(ErrorKind::kEmptyBudget, "voting budget K must be at least 1");
  Engine rng = make_engine(seed);
  int flips = 0;
  if (permute)
    for (int q = 0; q < k; ++q) flips += fair_coin(rng) ? 1 : 0;
  const std::uint64_t forward_seed = rng();
  const std::uint64_t swapped_seed = rng();

  VoteTally tally;
  tally.pair = {image_i.id, image_j.id};
  tally.flips = flips;

  auto ask = [&](const ImageRef& first, const ImageRef& second, int n, std::uint64_t s,
                 bool swapped) {
    if (n == 0) return;
    std::vector<Vote> votes;
    try {
      votes = backend.compare(first, second, n, s);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kTimeout) throw;
      tally.discarded += n;
      return;
    }
    // A short answer list counts the missing answers as discarded.
    tally.discarded += n - static_cast<int>(std::min<std::size_t>(votes.size(), static_cast<std::size_t>(n)));
    for (std::size_t q = 0; q < votes.size() && q < static_cast<std::size_t>(n); ++q) {
      if (votes[q] == Vote::kInvalid) {
        ++tally.discarded;
        continue;
      }
      const bool first_wins = votes[q] == Vote::kFirst;
      // Canonical orientation: i is "first" unless the query was swapped.
      if (first_wins != swapped) ++tally.k_x;
      else ++tally.k_y;
    }
  };
  ask(image_i, image_j, k - flips, forward_seed, false);
  ask(image_j, image_i, flips, swapped_seed, true);
  tally.k = tally.k_x + tally.k_y;
  return tally;
}

VoteTally vote_on_pair(const PolicySnapshot& policy, const LatentImage& image_i,
                       const LatentImage& image_j, int k, double position_bias,
                       std::uint64_t seed, bool permute) {
  InProcessBackend backend(policy, position_bias);
  return vote_on_pair(backend, ImageRef::of(image_i), ImageRef::of(image_j), k, seed, permute);
}

OfflineResult run_offline_stage(PolicyBackend& backend, const Corpus& corpus,
                                const PairSet& pairs, std::uint64_t seed,
                                const OfflineOptions& options) {
  if (pairs.pairs.empty()) fail(ErrorKind::kInfeasibleSampling, "offline stage needs a nonempty pair set");
  if (options.k < 1) fail(ErrorKind::kEmptyBudget, "voting budget K must be at least 1");
  const SeedDerivation seeds(seed);
  const std::size_t n = pairs.pairs.size();
  std::vector<VoteTally> tallies(n);

  auto work = [&](std::size_t idx) {
    const auto [i, j] = pairs.pairs[idx];
    try {
      tallies[idx] = vote_on_pair(backend, ImageRef::of(corpus.at(i)), ImageRef::of(corpus.at(j)),
                                  options.k, seeds.derive("pair/" + std::to_string(idx)),
                                  options.permute);
    } catch (const Error& e) {
      throw Error(e.kind(), "pair " + std::to_string(idx) + " (" + std::to_string(i) + ", " +
                                std::to_string(j) + "): " + e.what());
    }
  };

  const int threads = backend.concurrent() ? std::max(1, options.n_threads) : 1;
  if (threads == 1) {
    for (std::size_t idx = 0; idx < n; ++idx) work(idx);
  } else {
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::size_t first_error_idx = n;
    {
      std::vector<std::jthread> pool;
      for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          for (std::size_t idx = static_cast<std::size_t>(t); idx < n;
               idx += static_cast<std::size_t>(threads)) {
            try {
              work(idx);
            } catch (...) {
              std::lock_guard lock(error_mutex);
              // Report the lowest failing pair so errors are deterministic too.
              if (idx < first_error_idx) {
                first_error_idx = idx;
                first_error = std::current_exception();
              }
              return;
            }
          }
        });
      }
    }
    if (first_error) std::rethrow_exception(first_error);
  }

  OfflineResult result;
  result.tallies = std::move(tallies);
  result.labels.reserve(n);
  for (const auto& t : result.tallies) result.labels.push_back(tally_to_label(t));
  return result;
}

void write_vote_log(const std::vector<VoteTally>& tallies, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& t : tallies) {
    json rec = {{"pair", {t.pair.first, t.pair.second}},
                {"K", t.k},
                {"K_x", t.k_x},
                {"K_y", t.k_y},
                {"p_star", tally_to_label(t).p_star},
                {"flips", t.flips},
                {"discarded", t.discarded}};
    out << rec.dump() << '\n';
  }
}

void write_pseudo_labels(const std::vector<PseudoLabel>& labels,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& l : labels) {
    json rec = {{"pair", {l.pair.first, l.pair.second}}, {"p_star", l.p_star}};
    out << rec.dump() << '\n';
  }
}

std::vector<PseudoLabel> read_pseudo_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<PseudoLabel> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      const auto pair = rec.at("pair").get<std::vector<int>>();
      const double p = rec.at("p_star").get<double>();
      if (pair.size() != 2 || (p != 0.0 && p != 0.5 && p != 1.0))
        fail(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": invalid label");
      labels.push_back({{pair[0], pair[1]}, p});
    } catch (const json::exception& e) {
      fail(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return labels;
}

}  // namespace evoq
