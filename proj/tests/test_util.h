// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_TESTS_TEST_UTIL_H_
#define DUALFORMER_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dualformer/rng.h"
#include "dualformer/tensor.h"

namespace dualformer::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0, DType dtype = DType::kF64) {
  Rng rng(seed);
  return rng.uniform_tensor(s, lo, hi, dtype);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto av = a.to_vector();
  const auto bv = b.to_vector();
  if (av.size() != bv.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    m = std::max(m, std::abs(av[i] - bv[i]));
  }
  return m;
}

inline Tensor make(Shape s, std::vector<double> v, DType dt = DType::kF64) {
  return Tensor::from_values(s, v, dt);
}

}  // namespace dualformer::testing

#endif  // DUALFORMER_TESTS_TEST_UTIL_H_
