// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dualformer/ops.h"
#include "dualformer/rng.h"
#include "dualformer/tape.h"

namespace dualformer {
namespace {

// Fixed contraction so that every output entry gets a distinct weight.
Tensor contract(const Tensor& y) {
  if (y.numel() == 1) return reshape(y, Shape{1, 1, 1, 1});
  Rng rng(0xc0ffee);
  return weighted_sum(y, rng.uniform_tensor(y.shape(), 0.5, 1.5, y.dtype()));
}

double evaluate(const MultiTensorFn& f, const std::vector<Tensor>& inputs) {
  Tensor y = f(inputs);
  check_finite(y, "grad_check forward");
  return contract(y).item();
}

std::vector<std::int64_t> pick_coords(std::int64_t numel, std::int64_t limit,
                                      Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(numel));
  std::iota(idx.begin(), idx.end(), 0);
  if (limit <= 0 || limit >= numel) return idx;
  // Partial Fisher-Yates.
  for (std::int64_t i = 0; i < limit; ++i) {
    const auto j = i + static_cast<std::int64_t>(
                           rng.below(static_cast<std::uint64_t>(numel - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error
     << " coords=" << coords_checked << " worst=(input " << worst_input
     << ", index " << worst_index << ", analytic " << worst_analytic
     << ", numeric " << worst_numeric << ")";
  return os.str();
}

GradCheckReport grad_check(const MultiTensorFn& f,
                           const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  for (const Tensor& x : inputs) {
    if (x.dtype() != DType::kF64) {
      throw std::invalid_argument("grad_check requires float64 inputs");
    }
  }
  std::vector<Tensor> analytic;
  {
    Tape tape;
    tape.set_validate(true);
    std::vector<Tensor> watched;
    watched.reserve(inputs.size());
    for (const Tensor& x : inputs) watched.push_back(tape.watch(x.detach()));
    Tensor y = f(watched);
    Tensor root = contract(y);
    if (root.tape() != &tape) {
      throw std::invalid_argument("grad_check: output does not depend on inputs");
    }
    Gradients grads = tape.backward(root);
    for (const Tensor& w : watched) analytic.push_back(grads.of(w));
  }

  GradCheckReport report;
  Rng rng(options.seed);
  std::vector<Tensor> probe(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) probe[i] = inputs[i].detach();

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> base = inputs[i].to_vector();
    const std::vector<double> ga = analytic[i].to_vector();
    for (std::int64_t idx :
         pick_coords(inputs[i].numel(), options.max_coords_per_input, rng)) {
      const auto k = static_cast<std::size_t>(idx);
      const double x0 = base[k];
      base[k] = x0 + options.step;
      probe[i] = Tensor::from_values(inputs[i].shape(), base, DType::kF64);
      const double fp = evaluate(f, probe);
      base[k] = x0 - options.step;
      probe[i] = Tensor::from_values(inputs[i].shape(), base, DType::kF64);
      const double fm = evaluate(f, probe);
      base[k] = x0;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double denom =
          std::max({std::abs(ga[k]), std::abs(numeric), options.floor});
      const double rel = std::abs(ga[k] - numeric) / denom;
      ++report.coords_checked;
      if (!(rel <= report.max_rel_error)) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_index = idx;
        report.worst_analytic = ga[k];
        report.worst_numeric = numeric;
      }
    }
    probe[i] = inputs[i].detach();
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

GradCheckReport grad_check(const TensorFn& f, const Tensor& x, double step,
                           double tol) {
  GradCheckOptions options;
  options.step = step;
  options.tol = tol;
  return grad_check(
      [&f](const std::vector<Tensor>& xs) { return f(xs.front()); }, {x},
      options);
}

}  // namespace dualformer
