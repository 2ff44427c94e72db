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
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "evoq/loop.hpp"

namespace evoq {

/// A complete run definition. world.n_references and evolution.n_pairs hold
/// full-scale counts; desk_scale shrinks them when the setup is built.
struct RunConfig {
  EvolutionSetup setup = defaults();
  std::string backend = "builtin";
  std::filesystem::path output_dir = "runs";
  double desk_scale = 0.1;
  double bridge_timeout_seconds = 60.0;

  static EvolutionSetup defaults();
  void validate() const;
  /// The setup actually run: counts scaled by desk_scale, never below the
  /// minimum the pipeline needs.
  EvolutionSetup scaled_setup() const;
};

/// Parses TOML text. Unknown keys are rejected; parse errors carry the line
/// number and semantic errors name the offending field.
RunConfig parse_config(std::string_view text, std::string_view source = "config");
RunConfig load_config(const std::filesystem::path& path);

/// Like load_config, then applies EVOQ_<SECTION>_<KEY> (or EVOQ_<KEY> for
/// top-level keys) from `environment` ("NAME=value" entries).
RunConfig load_config(const std::filesystem::path* path,
                      const std::vector<std::string>& environment);

std::string config_toml(const RunConfig& config);
void save_config(const RunConfig& config, const std::filesystem::path& path);

/// Runs one subcommand (args exclude the program name). Returns 0 on
/// success, 1 on a runtime failure and 2 on a usage error.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// The K values swept by the ablate-k subcommand.
inline constexpr int kAblationBudgets[] = {1, 8, 16, 32};

}  // namespace evoq
