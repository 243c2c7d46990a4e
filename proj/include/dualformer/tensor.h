// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_TENSOR_H_
#define DUALFORMER_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace dualformer {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

std::string_view dtype_name(DType dtype);

/// NCHW extent. Matrices are represented with the two trailing axes (H, W)
/// as (rows, cols), batched over (N, C).
struct Shape {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Raised for shape/argument contract violations.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf shows up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

/// Immutable dense NCHW array. Copies share storage. A tensor may carry a
/// handle into a Tape, in which case ops consuming it are recorded there.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::kF32);
  static Tensor full(Shape shape, double value, DType dtype = DType::kF32);
  static Tensor scalar(double value, DType dtype = DType::kF32);
  /// Values are converted to `dtype`; length must equal shape.numel().
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::kF32);

  template <typename T>
  static Tensor from_buffer(Shape shape, std::vector<T> values);

  bool defined() const { return buffer_ != nullptr; }
  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  std::int64_t numel() const { return shape_.numel(); }

  /// Typed view; throws if T does not match dtype().
  template <typename T>
  std::span<const T> values() const;

  double at(std::int64_t n, std::int64_t c, std::int64_t h,
            std::int64_t w) const;
  double item() const;
  std::vector<double> to_vector() const;

  Tensor to(DType dtype) const;
  /// Same values, no tape handle.
  Tensor detach() const;

  Tape* tape() const { return tape_; }
  std::int64_t node() const { return node_; }
  bool tracked() const { return tape_ != nullptr; }

  /// Bitwise equality of shape, dtype and values.
  bool identical(const Tensor& other) const;

 private:
  friend class Tape;
  using Buffer = std::variant<std::vector<float>, std::vector<double>>;

  Shape shape_;
  DType dtype_ = DType::kF32;
  std::shared_ptr<const Buffer> buffer_;
  Tape* tape_ = nullptr;
  std::int64_t node_ = -1;
};

template <typename T>
inline constexpr DType dtype_of =
    std::is_same_v<T, float> ? DType::kF32 : DType::kF64;

template <typename T>
Tensor Tensor::from_buffer(Shape shape, std::vector<T> values) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("buffer of " + std::to_string(values.size()) +
                     " values does not fit shape " + shape.str());
  }
  Tensor t;
  t.shape_ = shape;
  t.dtype_ = dtype_of<T>;
  t.buffer_ = std::make_shared<const Buffer>(std::move(values));
  return t;
}

template <typename T>
std::span<const T> Tensor::values() const {
  if (!buffer_) throw std::logic_error("values() on undefined tensor");
  const auto* vec = std::get_if<std::vector<T>>(buffer_.get());
  if (vec == nullptr) {
    throw std::invalid_argument("tensor dtype is " +
                                std::string(dtype_name(dtype_)));
  }
  return {vec->data(), vec->size()};
}

/// Calls fn.template operator()<T>() with T = float or double.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::kF32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

/// Throws NumericError naming `what` if any value is NaN or Inf.
void check_finite(const Tensor& t, std::string_view what);
bool all_finite(const Tensor& t);

}  // namespace dualformer

#endif  // DUALFORMER_TENSOR_H_
