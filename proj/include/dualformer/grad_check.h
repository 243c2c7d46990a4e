// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_GRAD_CHECK_H_
#define DUALFORMER_GRAD_CHECK_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dualformer/tensor.h"

namespace dualformer {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  // so entries with near-zero gradient are judged on absolute error.
  double floor = 1e-3;
  // Coordinates probed per input; <= 0 probes every coordinate.
  std::int64_t max_coords_per_input = 0;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = false;
  std::int64_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string summary() const;
};

using TensorFn = std::function<Tensor(const Tensor&)>;
using MultiTensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients with central differences. Inputs must be
/// float64. Non-scalar outputs are contracted with fixed pseudo-random
/// weights first. Non-finite values raise NumericError naming the op.
GradCheckReport grad_check(const MultiTensorFn& f,
                           const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const TensorFn& f, const Tensor& x, double step,
                           double tol);

}  // namespace dualformer

#endif  // DUALFORMER_GRAD_CHECK_H_
