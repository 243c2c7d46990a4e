// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_PARAMS_H_
#define DUALFORMER_PARAMS_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dualformer/nn_ops.h"
#include "dualformer/rng.h"
#include "dualformer/tensor.h"

namespace dualformer {

class Tape;

/// Named trainable tensors in insertion order. Names are dotted paths such
/// as "enc1.blk0.expand.weight".
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  /// Replaces an existing entry; the shape must not change.
  void set(std::string_view name, Tensor value);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::int64_t total_scalars() const;

  /// Copy whose tensors are registered as leaves on `tape`.
  ParamStore watched(Tape& tape) const;
  ParamStore to(DType dtype) const;
  /// Same names and shapes, every value zero.
  ParamStore zeros_like() const;
  bool identical(const ParamStore& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// How fresh parameters are filled.
enum class InitMode {
  kFanIn,  // weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; norm 1/0
  kZero,   // everything 0 (norm gains included)
};

/// Registers parameters under a path prefix. Each call draws from a stream
/// keyed by the full parameter name, so values do not depend on the order
/// in which unrelated blocks are built.
class ParamBuilder {
 public:
  ParamBuilder(ParamStore& store, const Rng& rng, DType dtype,
               InitMode mode = InitMode::kFanIn, std::string prefix = "");

  ParamBuilder scope(std::string_view name) const;
  const std::string& prefix() const { return prefix_; }
  DType dtype() const { return dtype_; }

  /// Adds "<name>.weight" (and "<name>.bias" when spec.bias).
  void conv(std::string_view name, const nn::ConvSpec& spec) const;
  /// Adds "<name>.gamma" and "<name>.beta", each (1, C, 1, 1).
  void norm(std::string_view name, std::int64_t channels) const;
  /// Adds the four squeeze-excitation tensors under "<name>.".
  void se(std::string_view name, const nn::SESpec& spec) const;

 private:
  std::string full(std::string_view name) const;
  ParamStore* store_;
  Rng rng_;
  DType dtype_;
  InitMode mode_;
  std::string prefix_;
};

/// Read-only accessor rooted at a path prefix.
class ParamView {
 public:
  explicit ParamView(const ParamStore& store, std::string prefix = "")
      : store_(&store), prefix_(std::move(prefix)) {}

  ParamView scope(std::string_view name) const;
  const Tensor& operator()(std::string_view name) const;
  const Tensor& weight(std::string_view conv) const;
  /// Undefined tensor when the conv has no bias.
  Tensor bias(std::string_view conv) const;
  nn::SEParams se(std::string_view name) const;
  const std::string& prefix() const { return prefix_; }

 private:
  std::string full(std::string_view name) const;
  const ParamStore* store_;
  std::string prefix_;
};

/// Convenience: conv2d with weights looked up as "<name>.weight/.bias".
Tensor apply_conv(const ParamView& p, std::string_view name,
                  const nn::ConvSpec& spec, const Tensor& x);
Tensor apply_norm(const ParamView& p, std::string_view name, const Tensor& x);

}  // namespace dualformer

#endif  // DUALFORMER_PARAMS_H_
