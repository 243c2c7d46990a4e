// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.
//
// Independent reference definitions of the image metrics: plain loops over
// every element and every window, with no shared code from the library.

#ifndef DUALFORMER_TESTS_METRIC_ORACLES_H_
#define DUALFORMER_TESTS_METRIC_ORACLES_H_

#include <cmath>
#include <cstdint>

#include "dualformer/tensor.h"

namespace dualformer::testing {

inline double psnr_oracle(const Tensor& a, const Tensor& b) {
  double se = 0.0;
  const Shape s = a.shape();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t h = 0; h < s.h; ++h)
        for (std::int64_t w = 0; w < s.w; ++w) {
          const double d = a.at(n, c, h, w) - b.at(n, c, h, w);
          se += d * d;
        }
  return 10.0 * std::log10(1.0 / (se / static_cast<double>(s.numel())));
}

// Direct 2D evaluation: for each valid 11x11 window, Gaussian-weighted
// moments, then the SSIM formula; averaged over windows then planes.
inline double ssim_oracle(const Tensor& a, const Tensor& b) {
  double g[11][11], total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      total += g[i][j];
    }
  const double c1 = 1e-4, c2 = 9e-4;
  const Shape s = a.shape();
  double sum_planes = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      double sum = 0.0;
      std::int64_t count = 0;
      for (std::int64_t y = 0; y + 11 <= s.h; ++y)
        for (std::int64_t x = 0; x + 11 <= s.w; ++x) {
          double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
          for (int i = 0; i < 11; ++i)
            for (int j = 0; j < 11; ++j) {
              const double wgt = g[i][j] / total;
              const double u = a.at(n, c, y + i, x + j), v = b.at(n, c, y + i, x + j);
              mx += wgt * u;
              my += wgt * v;
              xx += wgt * u * u;
              yy += wgt * v * v;
              xy += wgt * u * v;
            }
          const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
          sum += (2 * mx * my + c1) * (2 * cxy + c2) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++count;
        }
      sum_planes += sum / static_cast<double>(count);
    }
  return sum_planes / static_cast<double>(s.n * s.c);
}

}  // namespace dualformer::testing

#endif  // DUALFORMER_TESTS_METRIC_ORACLES_H_
