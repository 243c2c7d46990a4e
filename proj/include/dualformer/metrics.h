// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_METRICS_H_
#define DUALFORMER_METRICS_H_

#include <string_view>

#include "dualformer/tensor.h"

namespace dualformer::metrics {

/// 10 log10(peak^2 / MSE) over all entries. Identical inputs give +infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 1. The SSIM map is averaged over valid
/// window positions (no padding) and then over every (n, c) plane.
double ssim(const Tensor& a, const Tensor& b);

/// BT.601 studio-swing luma from RGB in [0, 1]:
/// Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255, shaped (N,1,H,W).
Tensor to_y_channel(const Tensor& rgb);

enum class ChannelMode { kRgb, kY };
std::string_view to_string(ChannelMode m);

struct MetricResult {
  double psnr = 0.0;
  double ssim = 0.0;
  ChannelMode mode = ChannelMode::kRgb;
};

MetricResult evaluate(const Tensor& pred, const Tensor& ref,
                      ChannelMode mode = ChannelMode::kRgb);

}  // namespace dualformer::metrics

#endif  // DUALFORMER_METRICS_H_
