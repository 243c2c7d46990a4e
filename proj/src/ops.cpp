// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/ops.h"

#include <cmath>
#include <numeric>
#include <string>

#include "dualformer/parallel.h"
#include "dualformer/tape.h"

namespace dualformer {
namespace {

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw std::invalid_argument(std::string(op) + ": dtype mismatch " +
                                std::string(dtype_name(a.dtype())) + " vs " +
                                std::string(dtype_name(b.dtype())));
  }
}

struct Strides {
  std::int64_t n, c, h, w;
};

// Strides of `b` when read at `a`'s indices; broadcast axes get stride 0.
Strides broadcast_strides(const Shape& a, const Shape& b, const char* op) {
  auto axis = [&](std::int64_t ad, std::int64_t bd) {
    if (bd != ad && bd != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + b.str() +
                       " onto " + a.str());
    }
    return bd != 1;
  };
  const bool bn = axis(a.n, b.n), bc = axis(a.c, b.c), bh = axis(a.h, b.h),
             bw = axis(a.w, b.w);
  return Strides{bn ? b.c * b.h * b.w : 0, bc ? b.h * b.w : 0, bh ? b.w : 0,
                 bw ? 1 : 0};
}

template <typename T, typename F>
std::vector<T> broadcast_apply(const Tensor& a, const Tensor& b, F f) {
  const Shape& s = a.shape();
  const Strides st = broadcast_strides(s, b.shape(), "broadcast");
  auto av = a.values<T>();
  auto bv = b.values<T>();
  std::vector<T> out(av.size());
  std::int64_t i = 0;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t h = 0; h < s.h; ++h) {
        const std::int64_t base = n * st.n + c * st.c + h * st.h;
        for (std::int64_t w = 0; w < s.w; ++w, ++i) {
          out[i] = f(av[i], bv[base + w * st.w]);
        }
      }
  return out;
}

// Sums `g` (shape of a) down to `target` by adding over broadcast axes.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  return dispatch(g.dtype(), [&]<typename T>() {
    const Shape& s = g.shape();
    const Strides st = broadcast_strides(s, target, "reduce");
    auto gv = g.values<T>();
    std::vector<T> out(static_cast<std::size_t>(target.numel()), T(0));
    std::int64_t i = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t h = 0; h < s.h; ++h) {
          const std::int64_t base = n * st.n + c * st.c + h * st.h;
          for (std::int64_t w = 0; w < s.w; ++w, ++i) {
            out[base + w * st.w] += gv[i];
          }
        }
    return Tensor::from_buffer(target, std::move(out));
  });
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  return dispatch(a.dtype(), [&]<typename T>() {
    auto av = a.values<T>();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return Tensor::from_buffer(a.shape(), std::move(out));
  });
}

template <typename F>
Tensor map_binary_same(const Tensor& a, const Tensor& b, F f) {
  return dispatch(a.dtype(), [&]<typename T>() {
    auto av = a.values<T>();
    auto bv = b.values<T>();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return Tensor::from_buffer(a.shape(), std::move(out));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "add");
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    return Tensor::from_buffer(
        a.shape(), broadcast_apply<T>(a, b, [](T x, T y) { return x + y; }));
  });
  const Shape bs = b.shape();
  return maybe_record(
      std::move(out), {a, b},
      [bs](const Tensor& g) {
        return std::vector<Tensor>{g, reduce_to(g, bs)};
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "sub");
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    return Tensor::from_buffer(
        a.shape(), broadcast_apply<T>(a, b, [](T x, T y) { return x - y; }));
  });
  const Shape bs = b.shape();
  return maybe_record(
      std::move(out), {a, b},
      [bs](const Tensor& g) {
        return std::vector<Tensor>{g, scale(reduce_to(g, bs), -1.0)};
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "mul");
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    return Tensor::from_buffer(
        a.shape(), broadcast_apply<T>(a, b, [](T x, T y) { return x * y; }));
  });
  return maybe_record(
      std::move(out), {a, b},
      [a = a.detach(), b = b.detach()](const Tensor& g) {
        Tensor ga = dispatch(g.dtype(), [&]<typename T>() {
          return Tensor::from_buffer(
              g.shape(),
              broadcast_apply<T>(g, b, [](T x, T y) { return x * y; }));
        });
        Tensor gb = reduce_to(
            map_binary_same(g, a, [](auto x, auto y) { return x * y; }),
            b.shape());
        return std::vector<Tensor>{ga, gb};
      },
      "mul");
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    const T k = static_cast<T>(s);
    return map_unary(a, [k](T x) { return x * k; });
  });
  return maybe_record(
      std::move(out), {a},
      [s](const Tensor& g) { return std::vector<Tensor>{scale(g, s)}; },
      "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    const T k = static_cast<T>(s);
    return map_unary(a, [k](T x) { return x + k; });
  });
  return maybe_record(
      std::move(out), {a},
      [](const Tensor& g) { return std::vector<Tensor>{g}; }, "add_scalar");
}

Tensor square(const Tensor& a) {
  Tensor out = map_unary(a, [](auto x) { return x * x; });
  return maybe_record(
      std::move(out), {a},
      [a = a.detach()](const Tensor& g) {
        return std::vector<Tensor>{map_binary_same(
            g, a, [](auto gi, auto x) { return gi * (x + x); })};
      },
      "square");
}

Tensor abs(const Tensor& a) {
  Tensor out = map_unary(a, [](auto x) { return std::abs(x); });
  return maybe_record(
      std::move(out), {a},
      [a = a.detach()](const Tensor& g) {
        return std::vector<Tensor>{
            map_binary_same(g, a, [](auto gi, auto x) {
              using T = decltype(x);
              return x > T(0) ? gi : (x < T(0) ? -gi : T(0));
            })};
      },
      "abs");
}

Tensor log(const Tensor& a) {
  Tensor out = map_unary(a, [](auto x) { return std::log(x); });
  return maybe_record(
      std::move(out), {a},
      [a = a.detach()](const Tensor& g) {
        return std::vector<Tensor>{
            map_binary_same(g, a, [](auto gi, auto x) { return gi / x; })};
      },
      "log");
}

Tensor clamp_min(const Tensor& a, double floor) {
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    const T f = static_cast<T>(floor);
    return map_unary(a, [f](T x) { return x < f ? f : x; });
  });
  return maybe_record(
      std::move(out), {a},
      [a = a.detach(), floor](const Tensor& g) {
        return std::vector<Tensor>{map_binary_same(g, a, [floor](auto gi,
                                                                 auto x) {
          using T = decltype(x);
          return x < static_cast<T>(floor) ? T(0) : gi;
        })};
      },
      "clamp_min");
}

namespace {

template <typename T>
std::vector<T> matmul_kernel(const Tensor& a, const Tensor& b, bool ta,
                             bool tb, Shape out_shape, std::int64_t k) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::int64_t m = out_shape.h, n = out_shape.w;
  auto av = a.values<T>();
  auto bv = b.values<T>();
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()), T(0));
  const std::int64_t batches = out_shape.n * out_shape.c;
  parallel_for(
      0, batches,
      [&](std::int64_t batch) {
        const T* A = av.data() + batch * as.h * as.w;
        const T* B = bv.data() + batch * bs.h * bs.w;
        T* C = out.data() + batch * m * n;
        for (std::int64_t i = 0; i < m; ++i) {
          T* crow = C + i * n;
          for (std::int64_t p = 0; p < k; ++p) {
            const T aip = ta ? A[p * as.w + i] : A[i * as.w + p];
            if (tb) {
              for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * B[j * bs.w + p];
            } else {
              const T* brow = B + p * bs.w;
              for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
          }
        }
      },
      4);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a,
              bool transpose_b) {
  require_same_dtype(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n != bs.n || as.c != bs.c) {
    throw ShapeError("matmul: batch axes differ, " + as.str() + " vs " +
                     bs.str());
  }
  const std::int64_t m = transpose_a ? as.w : as.h;
  const std::int64_t ka = transpose_a ? as.h : as.w;
  const std::int64_t kb = transpose_b ? bs.w : bs.h;
  const std::int64_t n = transpose_b ? bs.h : bs.w;
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ, " + as.str() +
                     (transpose_a ? "^T" : "") + " x " + bs.str() +
                     (transpose_b ? "^T" : ""));
  }
  const Shape out_shape{as.n, as.c, m, n};
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    return Tensor::from_buffer(
        out_shape, matmul_kernel<T>(a, b, transpose_a, transpose_b, out_shape,
                                    ka));
  });
  return maybe_record(
      std::move(out), {a, b},
      [a = a.detach(), b = b.detach(), ta = transpose_a,
       tb = transpose_b](const Tensor& g) {
        Tensor ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
        Tensor gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
        return std::vector<Tensor>{ga, gb};
      },
      "matmul");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.numel() != a.numel()) {
    throw ShapeError("reshape: " + a.shape().str() + " to " + shape.str() +
                     " changes element count");
  }
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    auto v = a.values<T>();
    return Tensor::from_buffer(shape, std::vector<T>(v.begin(), v.end()));
  });
  const Shape from = a.shape();
  return maybe_record(
      std::move(out), {a},
      [from](const Tensor& g) {
        return std::vector<Tensor>{reshape(g, from)};
      },
      "reshape");
}

std::vector<Tensor> split_channels(const Tensor& x,
                                   std::initializer_list<std::int64_t> parts) {
  return split_channels(x, std::span<const std::int64_t>(parts.begin(),
                                                         parts.size()));
}

std::vector<Tensor> split_channels(const Tensor& x,
                                   std::span<const std::int64_t> parts) {
  const Shape& s = x.shape();
  std::int64_t total = 0;
  for (std::int64_t p : parts) {
    if (p <= 0) throw ShapeError("split_channels: non-positive part");
    total += p;
  }
  if (total != s.c) {
    throw ShapeError("split_channels: parts sum to " + std::to_string(total) +
                     " but tensor " + s.str() + " has " + std::to_string(s.c) +
                     " channels");
  }
  std::vector<Tensor> outs;
  std::int64_t offset = 0;
  for (std::int64_t p : parts) {
    const Shape ps{s.n, p, s.h, s.w};
    Tensor piece = dispatch(x.dtype(), [&]<typename T>() {
      auto v = x.values<T>();
      std::vector<T> out(static_cast<std::size_t>(ps.numel()));
      const std::int64_t plane = s.plane();
      for (std::int64_t n = 0; n < s.n; ++n) {
        const T* src = v.data() + (n * s.c + offset) * plane;
        std::copy(src, src + p * plane, out.data() + n * p * plane);
      }
      return Tensor::from_buffer(ps, std::move(out));
    });
    const std::int64_t off = offset;
    outs.push_back(maybe_record(
        std::move(piece), {x},
        [s, off, p](const Tensor& g) {
          return std::vector<Tensor>{dispatch(g.dtype(), [&]<typename T>() {
            auto gv = g.values<T>();
            std::vector<T> full(static_cast<std::size_t>(s.numel()), T(0));
            const std::int64_t plane = s.plane();
            for (std::int64_t n = 0; n < s.n; ++n) {
              std::copy(gv.data() + n * p * plane,
                        gv.data() + (n + 1) * p * plane,
                        full.data() + (n * s.c + off) * plane);
            }
            return Tensor::from_buffer(s, std::move(full));
          })};
        },
        "split_channels"));
    offset += p;
  }
  return outs;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs.front().shape();
  std::int64_t channels = 0;
  std::vector<std::int64_t> parts;
  for (const Tensor& t : xs) {
    require_same_dtype(xs.front(), t, "concat_channels");
    const Shape& s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " +
                       s0.str());
    }
    channels += s.c;
    parts.push_back(s.c);
  }
  const Shape out_shape{s0.n, channels, s0.h, s0.w};
  Tensor out = dispatch(xs.front().dtype(), [&]<typename T>() {
    std::vector<T> buf(static_cast<std::size_t>(out_shape.numel()));
    const std::int64_t plane = s0.plane();
    std::int64_t offset = 0;
    for (const Tensor& t : xs) {
      auto v = t.values<T>();
      const std::int64_t c = t.shape().c;
      for (std::int64_t n = 0; n < s0.n; ++n) {
        std::copy(v.data() + n * c * plane, v.data() + (n + 1) * c * plane,
                  buf.data() + (n * channels + offset) * plane);
      }
      offset += c;
    }
    return Tensor::from_buffer(out_shape, std::move(buf));
  });
  return maybe_record(
      std::move(out), xs,
      [parts](const Tensor& g) { return split_channels(g, parts); },
      "concat_channels");
}

Tensor sum(const Tensor& a) {
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    double acc = 0.0;
    for (T v : a.values<T>()) acc += static_cast<double>(v);
    return Tensor::scalar(acc, a.dtype());
  });
  const Shape s = a.shape();
  return maybe_record(
      std::move(out), {a},
      [s](const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(s, g.item(), g.dtype())};
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor weighted_sum(const Tensor& a, const Tensor& weights) {
  require_same_dtype(a, weights, "weighted_sum");
  if (a.shape() != weights.shape()) {
    throw ShapeError("weighted_sum: " + a.shape().str() + " vs " +
                     weights.shape().str());
  }
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    auto av = a.values<T>();
    auto wv = weights.values<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      acc += static_cast<double>(av[i]) * static_cast<double>(wv[i]);
    }
    return Tensor::scalar(acc, a.dtype());
  });
  return maybe_record(
      std::move(out), {a},
      [w = weights.detach()](const Tensor& g) {
        return std::vector<Tensor>{scale(w, g.item())};
      },
      "weighted_sum");
}

}  // namespace dualformer
