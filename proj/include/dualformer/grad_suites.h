// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_GRAD_SUITES_H_
#define DUALFORMER_GRAD_SUITES_H_

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dualformer/grad_check.h"

namespace dualformer {

/// One registered finite-difference check. `run` draws its float64 inputs
/// and parameters from the seed.
struct GradUnit {
  std::string scope;  // "op", "block" or "model"
  std::string name;
  double tol = 1e-4;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

/// Units of one scope ("op", "block", "model") or of all scopes ("all").
/// Throws std::invalid_argument for an unknown scope.
std::vector<GradUnit> grad_units(std::string_view scope);

/// Negative control: an op whose backward is deliberately wrong. Its check
/// must fail.
GradUnit corrupted_grad_unit();

}  // namespace dualformer

#endif  // DUALFORMER_GRAD_SUITES_H_
