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
#include <random>
#include <string>
#include <string_view>

namespace evoq {

/// Derives independent 64-bit seeds from a master seed and a namespace label
/// such as "round/1/vote/pair/17". The derivation is SHA-256 over the
/// little-endian master seed followed by the label bytes; the first eight
/// digest bytes form the child seed.
class SeedDerivation {
 public:
  explicit SeedDerivation(std::uint64_t master_seed) : master_(master_seed) {}

  std::uint64_t master() const noexcept { return master_; }
  std::uint64_t derive(std::string_view label) const;

  /// A child derivation rooted at derive(label), so nested components can
  /// keep their own label namespaces.
  SeedDerivation child(std::string_view label) const {
    return SeedDerivation(derive(label));
  }

 private:
  std::uint64_t master_;
};

std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline bool fair_coin(Engine& eng) { return (eng() >> 63) != 0; }

// Unbiased integer in [0, n), n > 0.
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
  const std::uint64_t limit = Engine::max() - Engine::max() % n;
  std::uint64_t x;
  do {
    x = eng();
  } while (x >= limit);
  return x % n;
}

std::string sha256_hex(std::string_view bytes);

}  // namespace evoq
