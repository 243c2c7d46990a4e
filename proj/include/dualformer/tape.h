// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_TAPE_H_
#define DUALFORMER_TAPE_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dualformer/tensor.h"

namespace dualformer {

/// Maps an output gradient to one gradient per recorded input. An undefined
/// Tensor in the result means "no contribution" for that input.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

class Gradients {
 public:
  /// Gradient of the root with respect to `t`. Tensors the root does not
  /// depend on get zeros of their own shape.
  Tensor of(const Tensor& t) const;
  bool reached(const Tensor& t) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::optional<Tensor>> grads_;
};

/// Reverse-mode recorder. Nodes are appended in execution order, so the
/// node list is always topologically sorted. One forward/backward pass owns
/// a tape; tensors referencing it must not outlive it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `t` as a leaf and returns a tracked copy.
  Tensor watch(const Tensor& t);

  /// Records an op output. Inputs that are untracked or belong to this
  /// tape are accepted; inputs from another tape are an error.
  Tensor record(Tensor value, const std::vector<Tensor>& inputs,
                BackwardFn backward, std::string op);

  /// Accumulates gradients from a scalar root back to every node.
  Gradients backward(const Tensor& root) const;

  /// When set, every recorded value and every backward gradient is checked
  /// for NaN/Inf, and the offending op is named in the error.
  void set_validate(bool on) { validate_ = on; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Gradients;
  struct Node {
    std::string op;
    Shape shape;
    DType dtype;
    std::vector<std::int64_t> inputs;  // -1 for untracked inputs
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool validate_ = false;
};

/// The tape shared by `inputs`, or nullptr if none is tracked. Throws if
/// inputs reference different tapes.
Tape* common_tape(const std::vector<Tensor>& inputs);

/// Records `value` on the inputs' tape if any input is tracked; otherwise
/// returns it unchanged. `backward` is only invoked when needed.
Tensor maybe_record(Tensor value, const std::vector<Tensor>& inputs,
                    BackwardFn backward, const char* op);

}  // namespace dualformer

#endif  // DUALFORMER_TAPE_H_
