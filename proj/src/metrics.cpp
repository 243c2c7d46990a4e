// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/metrics.h"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace dualformer::metrics {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering of one plane: rows first, then columns.
std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t h,
                                 std::int64_t w,
                                 const std::array<double, kWindow>& g) {
  const std::int64_t ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * img[r * w + c + k];
      rows[r * ow + c] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t r = 0; r < oh; ++r)
    for (std::int64_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[(r + k) * ow + c];
      out[r * ow + c] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_shape(a, b, "psnr");
  const auto av = a.to_vector();
  const auto bv = b.to_vector();
  // Neumaier summation: uniform errors then give an exactly uniform mean,
  // so closed-form cases come out exact.
  double se = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    const double term = d * d;
    const double t = se + term;
    comp += std::abs(se) >= term ? (se - t) + term : (term - t) + se;
    se = t;
  }
  const double mse = (se + comp) / static_cast<double>(av.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak) - 10.0 * std::log10(mse);
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  const Shape s = a.shape();
  if (s.h < kWindow || s.w < kWindow) {
    throw ShapeError("ssim: image " + s.str() + " is smaller than the 11x11 window");
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = gaussian_taps();
  const auto av = a.to_vector();
  const auto bv = b.to_vector();
  const std::int64_t plane = s.plane();
  double total = 0.0;
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    std::vector<double> x(av.begin() + p * plane, av.begin() + (p + 1) * plane);
    std::vector<double> y(bv.begin() + p * plane, bv.begin() + (p + 1) * plane);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, s.h, s.w, g);
    const auto my = filter_valid(y, s.h, s.w, g);
    const auto sxx = filter_valid(xx, s.h, s.w, g);
    const auto syy = filter_valid(yy, s.h, s.w, g);
    const auto sxy = filter_valid(xy, s.h, s.w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(s.n * s.c);
}

Tensor to_y_channel(const Tensor& rgb) {
  const Shape s = rgb.shape();
  if (s.c != 3) throw ShapeError("to_y_channel: expected 3 channels, got " + s.str());
  const auto v = rgb.to_vector();
  const std::int64_t plane = s.plane();
  std::vector<double> y(static_cast<std::size_t>(s.n * plane));
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t i = 0; i < plane; ++i) {
      const double r = v[(n * 3 + 0) * plane + i];
      const double g = v[(n * 3 + 1) * plane + i];
      const double b = v[(n * 3 + 2) * plane + i];
      y[n * plane + i] = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0;
    }
  return Tensor::from_values({s.n, 1, s.h, s.w}, y, rgb.dtype());
}

std::string_view to_string(ChannelMode m) { return m == ChannelMode::kRgb ? "rgb" : "y"; }

MetricResult evaluate(const Tensor& pred, const Tensor& ref, ChannelMode mode) {
  MetricResult r;
  r.mode = mode;
  if (mode == ChannelMode::kY) {
    const Tensor py = to_y_channel(pred), ry = to_y_channel(ref);
    r.psnr = psnr(py, ry);
    r.ssim = ssim(py, ry);
  } else {
    r.psnr = psnr(pred, ref);
    r.ssim = ssim(pred, ref);
  }
  return r;
}

}  // namespace dualformer::metrics
