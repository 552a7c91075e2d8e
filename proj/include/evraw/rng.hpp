// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>

namespace evraw {

inline constexpr std::uint64_t splitmix64_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based random bit generator keyed by (seed, stream).
///
/// Draw i of stream s under seed k is a pure function of (k, s, i), so
/// per-pixel streams can be consumed in any order or on any thread and
/// still give bit-identical results. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64_finalize(seed ^ splitmix64_finalize(stream + 0x632BE59BD9B4E019ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    return splitmix64_finalize(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Stream identifiers used to decorrelate the simulator's noise sources.
enum class RngDomain : std::uint64_t {
  kShotNoise = 1,
  kReadNoise = 2,
  kBaNoise = 3,
  kDiffusion = 4,
  kProjection = 5,
  kScene = 6,
};

inline std::uint64_t stream_id(RngDomain domain, std::uint64_t index) {
  return (static_cast<std::uint64_t>(domain) << 56) ^ index;
}

}  // namespace evraw
