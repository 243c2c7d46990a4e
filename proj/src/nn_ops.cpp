// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/nn_ops.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dualformer/ops.h"
#include "dualformer/parallel.h"
#include "dualformer/tape.h"

namespace dualformer::nn {

ConvSpec ConvSpec::dense(std::int64_t in, std::int64_t out, std::int64_t k,
                         std::int64_t stride) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = k;
  s.stride = stride;
  return s;
}

ConvSpec ConvSpec::pointwise(std::int64_t in, std::int64_t out) {
  return dense(in, out, 1);
}

ConvSpec ConvSpec::depthwise(std::int64_t channels, std::int64_t k) {
  ConvSpec s = dense(channels, channels, k);
  s.groups = channels;
  return s;
}

ConvSpec ConvSpec::upsample2x(std::int64_t in, std::int64_t out) {
  ConvSpec s = dense(in, out, 2, 2);
  s.padding = 0;
  s.transposed = true;
  return s;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 ||
      groups < 1) {
    throw ShapeError("conv spec has non-positive field");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError("conv groups " + std::to_string(groups) +
                     " must divide in " + std::to_string(in_channels) +
                     " and out " + std::to_string(out_channels));
  }
  if (groups > 1 && (groups != in_channels || in_channels != out_channels)) {
    throw ShapeError("grouped conv must be depthwise (in == out == groups)");
  }
  if (transposed && groups != 1) {
    throw ShapeError("transposed conv supports groups == 1 only");
  }
}

Shape ConvSpec::weight_shape() const {
  if (transposed) return Shape{in_channels, out_channels, kernel, kernel};
  return Shape{out_channels, in_channels / groups, kernel, kernel};
}

Shape ConvSpec::output_shape(const Shape& in) const {
  const std::int64_t p = pad();
  if (transposed) {
    return Shape{in.n, out_channels, (in.h - 1) * stride - 2 * p + kernel,
                 (in.w - 1) * stride - 2 * p + kernel};
  }
  if (in.h + 2 * p < kernel || in.w + 2 * p < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) +
                     " larger than padded input " + in.str());
  }
  return Shape{in.n, out_channels, (in.h + 2 * p - kernel) / stride + 1,
               (in.w + 2 * p - kernel) / stride + 1};
}

namespace {

// Geometry of an ordinary (non-transposed) convolution x -> y.
struct Geometry {
  std::int64_t cin, cout, groups, k, stride, pad;
  std::int64_t cin_g() const { return cin / groups; }
  std::int64_t cout_g() const { return cout / groups; }
};

// Output columns [lo, hi) whose input column ow*stride - pad + kw is in
// [0, width).
inline void valid_range(std::int64_t out_len, std::int64_t in_len,
                        std::int64_t stride, std::int64_t offset,
                        std::int64_t& lo, std::int64_t& hi) {
  // offset = kw - pad; need 0 <= o*stride + offset < in_len
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const std::int64_t last = in_len - 1 - offset;
  hi = last < 0 ? 0 : std::min(out_len, last / stride + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void conv_forward_kernel(std::span<const T> x, const Shape& xs,
                         std::span<const T> w, std::span<T> y,
                         const Shape& ys, const Geometry& g) {
  parallel_for(0, ys.n * ys.c, [&](std::int64_t nc) {
    const std::int64_t n = nc / ys.c, co = nc % ys.c;
    const std::int64_t grp = co / g.cout_g();
    T* out = y.data() + nc * ys.h * ys.w;
    for (std::int64_t cig = 0; cig < g.cin_g(); ++cig) {
      const std::int64_t ci = grp * g.cin_g() + cig;
      const T* in = x.data() + (n * xs.c + ci) * xs.h * xs.w;
      const T* wk = w.data() + (co * g.cin_g() + cig) * g.k * g.k;
      for (std::int64_t kh = 0; kh < g.k; ++kh) {
        std::int64_t oh_lo, oh_hi;
        valid_range(ys.h, xs.h, g.stride, kh - g.pad, oh_lo, oh_hi);
        for (std::int64_t kw = 0; kw < g.k; ++kw) {
          const T wv = wk[kh * g.k + kw];
          std::int64_t ow_lo, ow_hi;
          valid_range(ys.w, xs.w, g.stride, kw - g.pad, ow_lo, ow_hi);
          for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
            const T* irow = in + (oh * g.stride + kh - g.pad) * xs.w +
                            (kw - g.pad);
            T* orow = out + oh * ys.w;
            if (g.stride == 1) {
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                orow[ow] += wv * irow[ow];
            } else {
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                orow[ow] += wv * irow[ow * g.stride];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv_backward_data_kernel(std::span<const T> gy, const Shape& ys,
                               std::span<const T> w, std::span<T> gx,
                               const Shape& xs, const Geometry& g) {
  parallel_for(0, xs.n * xs.c, [&](std::int64_t nc) {
    const std::int64_t n = nc / xs.c, ci = nc % xs.c;
    const std::int64_t grp = ci / g.cin_g();
    const std::int64_t cig = ci % g.cin_g();
    T* gin = gx.data() + nc * xs.h * xs.w;
    for (std::int64_t cog = 0; cog < g.cout_g(); ++cog) {
      const std::int64_t co = grp * g.cout_g() + cog;
      const T* go = gy.data() + (n * ys.c + co) * ys.h * ys.w;
      const T* wk = w.data() + (co * g.cin_g() + cig) * g.k * g.k;
      for (std::int64_t kh = 0; kh < g.k; ++kh) {
        std::int64_t oh_lo, oh_hi;
        valid_range(ys.h, xs.h, g.stride, kh - g.pad, oh_lo, oh_hi);
        for (std::int64_t kw = 0; kw < g.k; ++kw) {
          const T wv = wk[kh * g.k + kw];
          std::int64_t ow_lo, ow_hi;
          valid_range(ys.w, xs.w, g.stride, kw - g.pad, ow_lo, ow_hi);
          for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
            T* irow = gin + (oh * g.stride + kh - g.pad) * xs.w + (kw - g.pad);
            const T* orow = go + oh * ys.w;
            for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
              irow[ow * g.stride] += wv * orow[ow];
          }
        }
      }
    }
  });
}

template <typename T>
void conv_backward_weight_kernel(std::span<const T> gy, const Shape& ys,
                                 std::span<const T> x, const Shape& xs,
                                 std::span<T> gw, const Geometry& g) {
  parallel_for(0, g.cout, [&](std::int64_t co) {
    const std::int64_t grp = co / g.cout_g();
    for (std::int64_t cig = 0; cig < g.cin_g(); ++cig) {
      const std::int64_t ci = grp * g.cin_g() + cig;
      T* wk = gw.data() + (co * g.cin_g() + cig) * g.k * g.k;
      for (std::int64_t kh = 0; kh < g.k; ++kh) {
        std::int64_t oh_lo, oh_hi;
        valid_range(ys.h, xs.h, g.stride, kh - g.pad, oh_lo, oh_hi);
        for (std::int64_t kw = 0; kw < g.k; ++kw) {
          std::int64_t ow_lo, ow_hi;
          valid_range(ys.w, xs.w, g.stride, kw - g.pad, ow_lo, ow_hi);
          T acc = 0;
          for (std::int64_t n = 0; n < ys.n; ++n) {
            const T* go = gy.data() + (n * ys.c + co) * ys.h * ys.w;
            const T* in = x.data() + (n * xs.c + ci) * xs.h * xs.w;
            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const T* irow =
                  in + (oh * g.stride + kh - g.pad) * xs.w + (kw - g.pad);
              const T* orow = go + oh * ys.w;
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow)
                acc += orow[ow] * irow[ow * g.stride];
            }
          }
          wk[kh * g.k + kw] = acc;
        }
      }
    }
  });
}

// Per-channel sum of g over (n, h, w), shaped (1, C, 1, 1).
Tensor channel_sums(const Tensor& g) {
  return dispatch(g.dtype(), [&]<typename T>() {
    const Shape& s = g.shape();
    auto gv = g.values<T>();
    std::vector<T> out(static_cast<std::size_t>(s.c), T(0));
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T* p = gv.data() + (n * s.c + c) * s.plane();
        T acc = 0;
        for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
        out[static_cast<std::size_t>(c)] += acc;
      }
    return Tensor::from_buffer(Shape{1, s.c, 1, 1}, std::move(out));
  });
}

Tensor add_channel_bias(const Tensor& y, const Tensor& bias) {
  return dispatch(y.dtype(), [&]<typename T>() {
    const Shape& s = y.shape();
    auto yv = y.values<T>();
    auto bv = bias.values<T>();
    std::vector<T> out(yv.begin(), yv.end());
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        T* p = out.data() + (n * s.c + c) * s.plane();
        for (std::int64_t i = 0; i < s.plane(); ++i) p[i] += bv[c];
      }
    return Tensor::from_buffer(s, std::move(out));
  });
}

Tensor run_forward(const Tensor& x, const Tensor& w, const Geometry& g,
                   const Shape& ys) {
  return dispatch(x.dtype(), [&]<typename T>() {
    std::vector<T> y(static_cast<std::size_t>(ys.numel()), T(0));
    conv_forward_kernel<T>(x.values<T>(), x.shape(), w.values<T>(), y, ys, g);
    return Tensor::from_buffer(ys, std::move(y));
  });
}

Tensor run_backward_data(const Tensor& gy, const Tensor& w, const Geometry& g,
                         const Shape& xs) {
  return dispatch(gy.dtype(), [&]<typename T>() {
    std::vector<T> gx(static_cast<std::size_t>(xs.numel()), T(0));
    conv_backward_data_kernel<T>(gy.values<T>(), gy.shape(), w.values<T>(), gx,
                                 xs, g);
    return Tensor::from_buffer(xs, std::move(gx));
  });
}

Tensor run_backward_weight(const Tensor& gy, const Tensor& x,
                           const Geometry& g, const Shape& ws) {
  return dispatch(gy.dtype(), [&]<typename T>() {
    std::vector<T> gw(static_cast<std::size_t>(ws.numel()), T(0));
    conv_backward_weight_kernel<T>(gy.values<T>(), gy.shape(), x.values<T>(),
                                   x.shape(), gw, g);
    return Tensor::from_buffer(ws, std::move(gw));
  });
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& weight,
              const Tensor& bias) {
  spec.validate();
  const Shape& xs = x.shape();
  if (xs.c != spec.in_channels) {
    throw ShapeError("conv2d: input " + xs.str() + " has " +
                     std::to_string(xs.c) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight " + weight.shape().str() +
                     " does not match spec " + spec.weight_shape().str());
  }
  if (weight.dtype() != x.dtype()) {
    throw std::invalid_argument("conv2d: weight dtype differs from input");
  }
  const bool has_bias = spec.bias;
  if (has_bias && (!bias.defined() ||
                   bias.shape() != Shape{1, spec.out_channels, 1, 1})) {
    throw ShapeError("conv2d: bias must be (1," +
                     std::to_string(spec.out_channels) + ",1,1)");
  }
  const Shape ys = spec.output_shape(xs);
  if (ys.h < 1 || ys.w < 1) {
    throw ShapeError("conv2d: empty output for input " + xs.str());
  }

  Tensor y;
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  if (!spec.transposed) {
    const Geometry g{spec.in_channels, spec.out_channels, spec.groups,
                     spec.kernel, spec.stride, spec.pad()};
    y = run_forward(x, weight, g, ys);
    if (has_bias) y = add_channel_bias(y, bias);
    return maybe_record(
        std::move(y), inputs,
        [x = x.detach(), w = weight.detach(), g, has_bias,
         ws = spec.weight_shape()](const Tensor& gy) {
          std::vector<Tensor> grads{run_backward_data(gy, w, g, x.shape()),
                                    run_backward_weight(gy, x, g, ws)};
          if (has_bias) grads.push_back(channel_sums(gy));
          return grads;
        },
        "conv2d");
  }

  // Transposed: the adjoint of an ordinary conv mapping ys -> xs channels.
  const Geometry g{spec.out_channels, spec.in_channels, 1, spec.kernel,
                   spec.stride, spec.pad()};
  Shape check = ys;
  check.h = (ys.h + 2 * g.pad - g.k) / g.stride + 1;
  check.w = (ys.w + 2 * g.pad - g.k) / g.stride + 1;
  if (check.h != xs.h || check.w != xs.w) {
    throw ShapeError("conv2d: transposed geometry does not invert for " +
                     xs.str());
  }
  y = run_backward_data(x, weight, g, ys);
  if (has_bias) y = add_channel_bias(y, bias);
  return maybe_record(
      std::move(y), inputs,
      [x = x.detach(), w = weight.detach(), g, has_bias,
       ws = spec.weight_shape()](const Tensor& gy) {
        Shape xs = x.shape();
        std::vector<Tensor> grads{run_forward(gy, w, g, xs),
                                  run_backward_weight(x, gy, g, ws)};
        if (has_bias) grads.push_back(channel_sums(gy));
        return grads;
      },
      "conv2d_transposed");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const Shape& s = x.shape();
  const Shape ps{1, s.c, 1, 1};
  if (gamma.shape() != ps || beta.shape() != ps) {
    throw ShapeError("layer_norm: gamma/beta must be " + ps.str() + " for " +
                     s.str());
  }
  // Keeps normalized values and reciprocal std for backward.
  struct Saved {
    Tensor xhat;
    std::vector<double> rstd;
  };
  auto saved = std::make_shared<Saved>();
  Tensor y = dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    auto gv = gamma.values<T>();
    auto bv = beta.values<T>();
    const std::int64_t plane = s.plane();
    std::vector<T> out(xv.size()), xhat(xv.size());
    saved->rstd.resize(static_cast<std::size_t>(s.n * plane));
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* xp = xv.data() + n * s.c * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        double m = 0.0;
        for (std::int64_t c = 0; c < s.c; ++c) m += xp[c * plane + i];
        m /= static_cast<double>(s.c);
        double var = 0.0;
        for (std::int64_t c = 0; c < s.c; ++c) {
          const double d = xp[c * plane + i] - m;
          var += d * d;
        }
        var /= static_cast<double>(s.c);
        const double r = 1.0 / std::sqrt(var + eps);
        saved->rstd[static_cast<std::size_t>(n * plane + i)] = r;
        for (std::int64_t c = 0; c < s.c; ++c) {
          const std::int64_t idx = (n * s.c + c) * plane + i;
          const T xh = static_cast<T>((xp[c * plane + i] - m) * r);
          xhat[idx] = xh;
          out[idx] = xh * gv[c] + bv[c];
        }
      }
    }
    saved->xhat = Tensor::from_buffer(s, std::move(xhat));
    return Tensor::from_buffer(s, std::move(out));
  });
  return maybe_record(
      std::move(y), {x, gamma, beta},
      [saved, gamma = gamma.detach()](const Tensor& g) {
        return dispatch(g.dtype(), [&]<typename T>() {
          const Shape& s = g.shape();
          const std::int64_t plane = s.plane();
          auto gv = g.values<T>();
          auto xh = saved->xhat.values<T>();
          auto gm = gamma.values<T>();
          std::vector<T> gx(gv.size());
          std::vector<T> ggamma(static_cast<std::size_t>(s.c), T(0));
          std::vector<T> gbeta(static_cast<std::size_t>(s.c), T(0));
          for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t i = 0; i < plane; ++i) {
              double mean_d = 0.0, mean_dx = 0.0;
              for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t idx = (n * s.c + c) * plane + i;
                const double d = static_cast<double>(gv[idx]) * gm[c];
                mean_d += d;
                mean_dx += d * xh[idx];
              }
              mean_d /= static_cast<double>(s.c);
              mean_dx /= static_cast<double>(s.c);
              const double r = saved->rstd[static_cast<std::size_t>(n * plane + i)];
              for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t idx = (n * s.c + c) * plane + i;
                const double d = static_cast<double>(gv[idx]) * gm[c];
                gx[idx] = static_cast<T>(r * (d - mean_d - xh[idx] * mean_dx));
              }
            }
            for (std::int64_t c = 0; c < s.c; ++c) {
              const std::int64_t base = (n * s.c + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                ggamma[c] += gv[base + i] * xh[base + i];
                gbeta[c] += gv[base + i];
              }
            }
          }
          const Shape ps{1, s.c, 1, 1};
          return std::vector<Tensor>{
              Tensor::from_buffer(s, std::move(gx)),
              Tensor::from_buffer(ps, std::move(ggamma)),
              Tensor::from_buffer(ps, std::move(gbeta))};
        });
      },
      "layer_norm");
}

namespace {

template <typename F, typename DF>
Tensor pointwise_unary(const Tensor& x, F f, DF df, const char* op) {
  Tensor y = dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return Tensor::from_buffer(x.shape(), std::move(out));
  });
  return maybe_record(
      std::move(y), {x},
      [x = x.detach(), df](const Tensor& g) {
        return std::vector<Tensor>{dispatch(g.dtype(), [&]<typename T>() {
          auto xv = x.values<T>();
          auto gv = g.values<T>();
          std::vector<T> out(gv.size());
          for (std::size_t i = 0; i < gv.size(); ++i) out[i] = gv[i] * df(xv[i]);
          return Tensor::from_buffer(g.shape(), std::move(out));
        })};
      },
      op);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor gelu(const Tensor& x) {
  return pointwise_unary(
      x,
      [](auto v) {
        using T = decltype(v);
        const T t = std::tanh(T(kGeluC) * (v + T(kGeluA) * v * v * v));
        return T(0.5) * v * (T(1) + t);
      },
      [](auto v) {
        using T = decltype(v);
        const T t = std::tanh(T(kGeluC) * (v + T(kGeluA) * v * v * v));
        const T du = T(kGeluC) * (T(1) + T(3 * kGeluA) * v * v);
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
      },
      "gelu");
}

Tensor relu(const Tensor& x) {
  return pointwise_unary(
      x, [](auto v) { return v > 0 ? v : decltype(v)(0); },
      [](auto v) { return v > 0 ? decltype(v)(1) : decltype(v)(0); }, "relu");
}

Tensor sigmoid(const Tensor& x) {
  auto sig = [](auto v) {
    using T = decltype(v);
    return T(1) / (T(1) + std::exp(-v));
  };
  return pointwise_unary(
      x, sig,
      [sig](auto v) {
        const auto s = sig(v);
        return s * (decltype(v)(1) - s);
      },
      "sigmoid");
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 2 && axis != 3) {
    throw std::invalid_argument("softmax: axis must be 2 (H) or 3 (W)");
  }
  const Shape& s = x.shape();
  // Walk each slice along `axis` with `len` entries spaced `step` apart.
  const std::int64_t len = axis == 3 ? s.w : s.h;
  const std::int64_t step = axis == 3 ? 1 : s.w;
  const std::int64_t inner = axis == 3 ? 1 : s.w;
  const std::int64_t outer = axis == 3 ? s.n * s.c * s.h : s.n * s.c;
  const std::int64_t outer_stride = axis == 3 ? s.w : s.h * s.w;
  auto slice_base = [=](std::int64_t o, std::int64_t i) {
    return o * outer_stride + i;
  };
  Tensor y = dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<T> out(xv.size());
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t b = slice_base(o, i);
        T mx = xv[b];
        for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, xv[b + j * step]);
        T total = 0;
        for (std::int64_t j = 0; j < len; ++j) {
          const T e = std::exp(xv[b + j * step] - mx);
          out[b + j * step] = e;
          total += e;
        }
        for (std::int64_t j = 0; j < len; ++j) out[b + j * step] /= total;
      }
    return Tensor::from_buffer(s, std::move(out));
  });
  return maybe_record(
      y, {x},
      [y = y.detach(), len, step, inner, outer, slice_base](const Tensor& g) {
        return std::vector<Tensor>{dispatch(g.dtype(), [&]<typename T>() {
          auto yv = y.values<T>();
          auto gv = g.values<T>();
          std::vector<T> out(gv.size());
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
              const std::int64_t b = slice_base(o, i);
              T dot = 0;
              for (std::int64_t j = 0; j < len; ++j)
                dot += gv[b + j * step] * yv[b + j * step];
              for (std::int64_t j = 0; j < len; ++j)
                out[b + j * step] = yv[b + j * step] * (gv[b + j * step] - dot);
            }
          return Tensor::from_buffer(g.shape(), std::move(out));
        })};
      },
      "softmax");
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& s = x.shape();
  const Shape ps{s.n, s.c, 1, 1};
  Tensor y = dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<T> out(static_cast<std::size_t>(s.n * s.c));
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
      double acc = 0.0;
      const T* p = xv.data() + nc * s.plane();
      for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
      out[static_cast<std::size_t>(nc)] =
          static_cast<T>(acc / static_cast<double>(s.plane()));
    }
    return Tensor::from_buffer(ps, std::move(out));
  });
  return maybe_record(
      std::move(y), {x},
      [s](const Tensor& g) {
        return std::vector<Tensor>{dispatch(g.dtype(), [&]<typename T>() {
          auto gv = g.values<T>();
          std::vector<T> out(static_cast<std::size_t>(s.numel()));
          const T inv = T(1) / static_cast<T>(s.plane());
          for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            std::fill_n(out.data() + nc * s.plane(), s.plane(), gv[nc] * inv);
          }
          return Tensor::from_buffer(s, std::move(out));
        })};
      },
      "global_avg_pool");
}

Tensor upsample_nearest2x(const Tensor& x) {
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  Tensor y = dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    std::vector<T> out(static_cast<std::size_t>(os.numel()));
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc)
      for (std::int64_t h = 0; h < os.h; ++h)
        for (std::int64_t w = 0; w < os.w; ++w)
          out[(nc * os.h + h) * os.w + w] = xv[(nc * s.h + h / 2) * s.w + w / 2];
    return Tensor::from_buffer(os, std::move(out));
  });
  return maybe_record(
      std::move(y), {x},
      [s, os](const Tensor& g) {
        return std::vector<Tensor>{dispatch(g.dtype(), [&]<typename T>() {
          auto gv = g.values<T>();
          std::vector<T> out(static_cast<std::size_t>(s.numel()), T(0));
          for (std::int64_t nc = 0; nc < s.n * s.c; ++nc)
            for (std::int64_t h = 0; h < os.h; ++h)
              for (std::int64_t w = 0; w < os.w; ++w)
                out[(nc * s.h + h / 2) * s.w + w / 2] +=
                    gv[(nc * os.h + h) * os.w + w];
          return Tensor::from_buffer(s, std::move(out));
        })};
      },
      "upsample_nearest2x");
}

Tensor simple_gate(const Tensor& x) {
  const std::int64_t c = x.shape().c;
  if (c % 2 != 0) {
    throw ShapeError("simple_gate: channel count " + std::to_string(c) +
                     " is odd");
  }
  auto halves = split_channels(x, {c / 2, c / 2});
  return mul(halves[0], halves[1]);
}

void SESpec::validate() const {
  if (channels < 1 || reduction < 1 || channels % reduction != 0) {
    throw ShapeError("SE reduction " + std::to_string(reduction) +
                     " must divide channels " + std::to_string(channels));
  }
}

Tensor channel_attention(const Tensor& x, const SESpec& spec,
                         const SEParams& params) {
  spec.validate();
  if (x.shape().c != spec.channels) {
    throw ShapeError("channel_attention: input " + x.shape().str() +
                     " vs spec channels " + std::to_string(spec.channels));
  }
  Tensor s = global_avg_pool(x);
  s = conv2d(s, ConvSpec::pointwise(spec.channels, spec.hidden()),
             params.reduce_weight, params.reduce_bias);
  s = gelu(s);
  s = conv2d(s, ConvSpec::pointwise(spec.hidden(), spec.channels),
             params.expand_weight, params.expand_bias);
  return mul(x, sigmoid(s));
}

}  // namespace dualformer::nn
