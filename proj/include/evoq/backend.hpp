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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evoq/policy.hpp"
#include "evoq/world.hpp"

namespace evoq {

/// What a backend needs to know about an image: the corpus id plus either the
/// inline feature vector (synthetic world) or an opaque path (external data).
struct ImageRef {
  int id = 0;
  std::vector<double> features;
  std::string path;

  static ImageRef of(const LatentImage& img) { return {img.id, img.features, {}}; }
  bool operator==(const ImageRef&) const = default;
};

struct ScoreDraws {
  std::vector<double> scores;
  // Bin per score; empty when the peer reports raw scores only.
  std::vector<int> bins;
  // Absent when the backend cannot report trajectory log-probabilities.
  std::optional<std::vector<double>> log_probs;
};

/// Per-trajectory advantages handed to a peer that applies its own update.
struct AdvantageExport {
  int round = 0;
  int batch = 0;
  std::vector<std::string> trajectory_ids;
  std::vector<double> advantages;
  std::optional<std::vector<double>> log_probs;

  bool operator==(const AdvantageExport&) const = default;
};

/// The surface the voting and online stages talk to. Implemented in-process by
/// InProcessBackend and remotely by the bridge adapter.
class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;

  /// Receives the advantages of one online batch when the engine does not own
  /// the model parameters. The in-process backend ignores them.
  virtual void export_advantages(const AdvantageExport&) {}

  /// k comparison queries with `first` presented in slot 0. Votes are in
  /// presentation order; kInvalid marks a discarded answer.
  virtual std::vector<Vote> compare(const ImageRef& first, const ImageRef& second, int k,
                                    std::uint64_t seed) = 0;
  virtual ScoreDraws sample_scores(const ImageRef& image, int k, std::uint64_t seed) = 0;

  /// Whether concurrent calls are allowed.
  virtual bool concurrent() const { return false; }
};

class InProcessBackend final : public PolicyBackend {
 public:
  InProcessBackend(PolicySnapshot snapshot, double position_bias = 0.0)
      : snapshot_(std::move(snapshot)), position_bias_(position_bias) {}

  std::vector<Vote> compare(const ImageRef& first, const ImageRef& second, int k,
                            std::uint64_t seed) override;
  ScoreDraws sample_scores(const ImageRef& image, int k, std::uint64_t seed) override;
  bool concurrent() const override { return true; }

  const PolicySnapshot& snapshot() const { return snapshot_; }

 private:
  PolicySnapshot snapshot_;
  double position_bias_;
};

}  // namespace evoq
