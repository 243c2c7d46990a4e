// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/tape.h"

#include <stdexcept>
#include <utility>

#include "dualformer/ops.h"

namespace dualformer {

Tensor Gradients::of(const Tensor& t) const {
  if (reached(t)) return *grads_[static_cast<std::size_t>(t.node())];
  return Tensor::zeros(t.shape(), t.dtype());
}

bool Gradients::reached(const Tensor& t) const {
  if (t.tape() == nullptr) return false;
  if (t.tape() != tape_) {
    throw std::invalid_argument("tensor belongs to a different tape");
  }
  const auto idx = static_cast<std::size_t>(t.node());
  return idx < grads_.size() && grads_[idx].has_value();
}

Tensor Tape::watch(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("watch() on undefined tensor");
  if (t.tape() != nullptr) {
    throw std::invalid_argument("tensor is already tracked by a tape");
  }
  nodes_.push_back(Node{"leaf", t.shape(), t.dtype(), {}, nullptr});
  Tensor out = t;
  out.tape_ = this;
  out.node_ = static_cast<std::int64_t>(nodes_.size()) - 1;
  return out;
}

Tensor Tape::record(Tensor value, const std::vector<Tensor>& inputs,
                    BackwardFn backward, std::string op) {
  if (validate_) check_finite(value, op);
  Node node{std::move(op), value.shape(), value.dtype(), {},
            std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (in.tape() != nullptr && in.tape() != this) {
      throw std::invalid_argument("op '" + node.op +
                                  "' mixes tensors from different tapes");
    }
    node.inputs.push_back(in.tape() == this ? in.node() : -1);
  }
  nodes_.push_back(std::move(node));
  value.tape_ = this;
  value.node_ = static_cast<std::int64_t>(nodes_.size()) - 1;
  return value;
}

Gradients Tape::backward(const Tensor& root) const {
  if (root.tape() != this) {
    throw std::invalid_argument("backward root is not recorded on this tape");
  }
  if (root.numel() != 1) {
    throw ShapeError("backward root must be scalar, got " +
                     root.shape().str());
  }
  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  const auto root_idx = static_cast<std::size_t>(root.node());
  g.grads_[root_idx] = Tensor::full(root.shape(), 1.0, root.dtype());

  for (std::size_t i = root_idx + 1; i-- > 0;) {
    if (!g.grads_[i].has_value()) continue;
    const Node& node = nodes_[i];
    if (!node.backward) continue;
    std::vector<Tensor> in_grads = node.backward(*g.grads_[i]);
    if (in_grads.size() != node.inputs.size()) {
      throw std::logic_error("op '" + node.op +
                             "' returned wrong number of gradients");
    }
    for (std::size_t k = 0; k < in_grads.size(); ++k) {
      const std::int64_t src = node.inputs[k];
      if (src < 0 || !in_grads[k].defined()) continue;
      Tensor grad = in_grads[k].detach();
      const Node& src_node = nodes_[static_cast<std::size_t>(src)];
      if (grad.shape() != src_node.shape) {
        throw std::logic_error("op '" + node.op + "' produced gradient " +
                               grad.shape().str() + " for input " +
                               src_node.shape.str());
      }
      if (validate_) check_finite(grad, "backward of " + node.op);
      auto& slot = g.grads_[static_cast<std::size_t>(src)];
      slot = slot.has_value() ? add(*slot, grad) : grad;
    }
  }
  return g;
}

Tape* common_tape(const std::vector<Tensor>& inputs) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (t.tape() == nullptr) continue;
    if (tape != nullptr && t.tape() != tape) {
      throw std::invalid_argument("op inputs belong to different tapes");
    }
    tape = t.tape();
  }
  return tape;
}

Tensor maybe_record(Tensor value, const std::vector<Tensor>& inputs,
                    BackwardFn backward, const char* op) {
  Tape* tape = common_tape(inputs);
  if (tape == nullptr) return value;
  return tape->record(std::move(value), inputs, std::move(backward), op);
}

}  // namespace dualformer
