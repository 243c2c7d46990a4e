// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_TESTS_BLOCK_FIXTURES_H_
#define DUALFORMER_TESTS_BLOCK_FIXTURES_H_

#include <functional>
#include <string>
#include <vector>

#include "dualformer/grad_check.h"
#include "dualformer/params.h"
#include "dualformer/rng.h"
#include "test_util.h"

namespace dualformer::testing {

/// Every parameter replaced by U(lo, hi) draws, biases included, so that
/// zero-initialised biases do not hide gradient paths.
inline ParamStore randomized(const ParamStore& store, std::uint64_t seed,
                             double lo = -0.5, double hi = 0.5) {
  ParamStore out;
  Rng rng(seed);
  for (const auto& [name, t] : store.entries()) {
    out.add(name, rng.split(name).uniform_tensor(t.shape(), lo, hi, DType::kF64));
  }
  return out;
}

/// Same names as `like`, values taken from `values` in order.
inline ParamStore rebind(const ParamStore& like, const std::vector<Tensor>& values,
                         std::size_t offset) {
  ParamStore out;
  std::size_t i = offset;
  for (const auto& [name, t] : like.entries()) out.add(name, values[i++]);
  return out;
}

/// Finite-difference check of f(x, params) over x and every parameter.
inline GradCheckReport check_with_params(
    const std::function<Tensor(const Tensor&, const ParamStore&)>& f,
    const Tensor& x, const ParamStore& params, GradCheckOptions opts = {}) {
  std::vector<Tensor> inputs = {x};
  for (const auto& [name, t] : params.entries()) inputs.push_back(t);
  return grad_check(
      [&](const std::vector<Tensor>& v) { return f(v[0], rebind(params, v, 1)); },
      inputs, opts);
}

}  // namespace dualformer::testing

#endif  // DUALFORMER_TESTS_BLOCK_FIXTURES_H_
