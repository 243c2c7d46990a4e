// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_NN_OPS_H_
#define DUALFORMER_NN_OPS_H_

#include <cstdint>

#include "dualformer/tensor.h"

namespace dualformer::nn {

/// Convolution geometry. Weights are (out, in/groups, k, k) for ordinary
/// convolutions and (in, out, k, k) for transposed ones.
struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = -1;  // -1: "same", i.e. kernel / 2
  std::int64_t groups = 1;
  bool transposed = false;
  bool bias = true;

  static ConvSpec dense(std::int64_t in, std::int64_t out, std::int64_t k,
                        std::int64_t stride = 1);
  static ConvSpec pointwise(std::int64_t in, std::int64_t out);
  static ConvSpec depthwise(std::int64_t channels, std::int64_t k);
  /// 2x2 stride-2 transposed convolution doubling H and W.
  static ConvSpec upsample2x(std::int64_t in, std::int64_t out);

  std::int64_t pad() const { return padding < 0 ? kernel / 2 : padding; }
  bool is_depthwise() const { return groups > 1; }
  Shape weight_shape() const;
  Shape output_shape(const Shape& in) const;
  /// Throws ShapeError when the spec itself is inconsistent.
  void validate() const;
};

/// Cross-correlation (no kernel flip). `bias` may be undefined when
/// spec.bias is false.
Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& weight,
              const Tensor& bias);

/// Normalizes the C values at every (n, h, w) then applies the per-channel
/// affine. gamma and beta are (1, C, 1, 1).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

/// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Max-subtracted softmax along axis 2 (H, normalizes each column of a
/// matrix view) or axis 3 (W, normalizes each row).
Tensor softmax(const Tensor& x, int axis);

/// Mean over H x W, giving (N, C, 1, 1).
Tensor global_avg_pool(const Tensor& x);

/// Nearest-neighbour 2x spatial upsampling.
Tensor upsample_nearest2x(const Tensor& x);

/// Splits channels into halves (a, b) and returns a * b.
Tensor simple_gate(const Tensor& x);

struct SESpec {
  std::int64_t channels = 1;
  std::int64_t reduction = 4;
  std::int64_t hidden() const { return channels / reduction; }
  void validate() const;
};

struct SEParams {
  Tensor reduce_weight, reduce_bias;  // (hidden, C, 1, 1), (1, hidden, 1, 1)
  Tensor expand_weight, expand_bias;  // (C, hidden, 1, 1), (1, C, 1, 1)
};

/// Squeeze-excitation: x * sigmoid(W2 gelu(W1 GAP(x))), gate per channel.
Tensor channel_attention(const Tensor& x, const SESpec& spec,
                         const SEParams& params);

}  // namespace dualformer::nn

#endif  // DUALFORMER_NN_OPS_H_
