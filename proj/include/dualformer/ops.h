// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_OPS_H_
#define DUALFORMER_OPS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "dualformer/tensor.h"

namespace dualformer {

// Elementwise binary ops. `b` broadcasts onto `a`: every axis of b must
// either match a's or be 1. The result has a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// Elementwise unary ops.
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);  // subgradient 0 at 0
Tensor log(const Tensor& a);
/// max(a, floor); gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& a, double floor);

/// Batched matrix product over the trailing (H, W) axes:
/// (N,C,m,k) x (N,C,k,n) -> (N,C,m,n), with optional transposes.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

Tensor reshape(const Tensor& a, Shape shape);

std::vector<Tensor> split_channels(const Tensor& x,
                                   std::span<const std::int64_t> parts);
std::vector<Tensor> split_channels(const Tensor& x,
                                   std::initializer_list<std::int64_t> parts);
Tensor concat_channels(const std::vector<Tensor>& xs);

/// Full reductions to a (1,1,1,1) tensor, accumulated serially in storage
/// order.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// sum(a * w) with w a constant; used to turn feature maps into scalars.
Tensor weighted_sum(const Tensor& a, const Tensor& weights);

}  // namespace dualformer

#endif  // DUALFORMER_OPS_H_
