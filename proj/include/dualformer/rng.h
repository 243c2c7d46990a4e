// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_RNG_H_
#define DUALFORMER_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

#include "dualformer/tensor.h"

namespace dualformer {

/// Deterministic generator: std::mt19937_64 (whose output sequence is fixed
/// by the standard) with SplitMix64-derived seeds for child streams. Value
/// conversions are done here rather than with <random> distributions, whose
/// output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static constexpr std::string_view kAlgorithm = "mt19937_64/splitmix64";

  std::uint64_t seed() const { return seed_; }

  /// Independent stream keyed by `key`; does not advance this generator.
  Rng split(std::uint64_t key) const;
  Rng split(std::string_view key) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached second value).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Tensor uniform_tensor(Shape shape, double lo, double hi,
                        DType dtype = DType::kF32);
  Tensor normal_tensor(Shape shape, double stddev, DType dtype = DType::kF32);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace dualformer

#endif  // DUALFORMER_RNG_H_
