// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/tensor.h"

#include <cmath>
#include <cstring>
#include <sstream>

namespace dualformer {

std::string_view dtype_name(DType dtype) {
  return dtype == DType::kF32 ? "float32" : "float64";
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  return full(shape, 0.0, dtype);
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw ShapeError("non-positive extent in shape " + shape.str());
  }
  return dispatch(dtype, [&]<typename T>() {
    return from_buffer(shape, std::vector<T>(static_cast<std::size_t>(
                                                 shape.numel()),
                                             static_cast<T>(value)));
  });
}

Tensor Tensor::scalar(double value, DType dtype) {
  return full(Shape{1, 1, 1, 1}, value, dtype);
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values,
                           DType dtype) {
  return dispatch(dtype, [&]<typename T>() {
    return from_buffer(shape, std::vector<T>(values.begin(), values.end()));
  });
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h,
                  std::int64_t w) const {
  if (n < 0 || n >= shape_.n || c < 0 || c >= shape_.c || h < 0 ||
      h >= shape_.h || w < 0 || w >= shape_.w) {
    throw ShapeError("index out of range for shape " + shape_.str());
  }
  const std::int64_t idx = ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  return dispatch(dtype_, [&]<typename T>() {
    return static_cast<double>(values<T>()[idx]);
  });
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_.str());
  }
  return at(0, 0, 0, 0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype_, [&]<typename T>() {
    auto v = values<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return detach();
  return dispatch(dtype_, [&]<typename Src>() {
    auto src = values<Src>();
    return dispatch(dtype, [&]<typename Dst>() {
      std::vector<Dst> out(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        out[i] = static_cast<Dst>(src[i]);
      }
      return from_buffer(shape_, std::move(out));
    });
  });
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  return dispatch(dtype_, [&]<typename T>() {
    auto a = values<T>();
    auto b = other.values<T>();
    return std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
  });
}

bool all_finite(const Tensor& t) {
  return dispatch(t.dtype(), [&]<typename T>() {
    for (T v : t.values<T>()) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  });
}

void check_finite(const Tensor& t, std::string_view what) {
  if (!all_finite(t)) {
    throw NumericError("non-finite value produced by " + std::string(what) +
                       " (shape " + t.shape().str() + ")");
  }
}

}  // namespace dualformer
