// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/params.h"

#include <cmath>
#include <stdexcept>

#include "dualformer/tape.h"

namespace dualformer {

void ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

void ParamStore::set(std::string_view name, Tensor value) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + std::string(name));
  }
  Tensor& slot = entries_[it->second].second;
  if (slot.shape() != value.shape()) {
    throw ShapeError("parameter " + std::string(name) + " shape " +
                     slot.shape().str() + " cannot become " +
                     value.shape().str());
  }
  slot = std::move(value);
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + std::string(name));
  }
  return entries_[it->second].second;
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::int64_t ParamStore::total_scalars() const {
  std::int64_t total = 0;
  for (const auto& [name, t] : entries_) total += t.numel();
  return total;
}

ParamStore ParamStore::watched(Tape& tape) const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.add(name, tape.watch(t.detach()));
  return out;
}

ParamStore ParamStore::to(DType dtype) const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.add(name, t.to(dtype));
  return out;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) {
    out.add(name, Tensor::zeros(t.shape(), t.dtype()));
  }
  return out;
}

bool ParamStore::identical(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first ||
        !entries_[i].second.identical(other.entries_[i].second)) {
      return false;
    }
  }
  return true;
}

ParamBuilder::ParamBuilder(ParamStore& store, const Rng& rng, DType dtype,
                           InitMode mode, std::string prefix)
    : store_(&store),
      rng_(rng),
      dtype_(dtype),
      mode_(mode),
      prefix_(std::move(prefix)) {}

ParamBuilder ParamBuilder::scope(std::string_view name) const {
  ParamBuilder child = *this;
  child.prefix_ = full(name);
  return child;
}

std::string ParamBuilder::full(std::string_view name) const {
  if (prefix_.empty()) return std::string(name);
  return prefix_ + "." + std::string(name);
}

void ParamBuilder::conv(std::string_view name,
                        const nn::ConvSpec& spec) const {
  spec.validate();
  const Shape ws = spec.weight_shape();
  const std::string wname = full(name) + ".weight";
  Tensor w;
  if (mode_ == InitMode::kZero) {
    w = Tensor::zeros(ws, dtype_);
  } else {
    const std::int64_t fan_in = spec.transposed
                                    ? spec.out_channels * spec.kernel * spec.kernel
                                    : (spec.in_channels / spec.groups) *
                                          spec.kernel * spec.kernel;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng r = rng_.split(wname);
    w = r.uniform_tensor(ws, -bound, bound, dtype_);
  }
  store_->add(wname, std::move(w));
  if (spec.bias) {
    store_->add(full(name) + ".bias",
                Tensor::zeros(Shape{1, spec.out_channels, 1, 1}, dtype_));
  }
}

void ParamBuilder::norm(std::string_view name, std::int64_t channels) const {
  const Shape ps{1, channels, 1, 1};
  store_->add(full(name) + ".gamma",
              Tensor::full(ps, mode_ == InitMode::kZero ? 0.0 : 1.0, dtype_));
  store_->add(full(name) + ".beta", Tensor::zeros(ps, dtype_));
}

void ParamBuilder::se(std::string_view name, const nn::SESpec& spec) const {
  spec.validate();
  ParamBuilder s = scope(name);
  s.conv("reduce", nn::ConvSpec::pointwise(spec.channels, spec.hidden()));
  s.conv("expand", nn::ConvSpec::pointwise(spec.hidden(), spec.channels));
}

ParamView ParamView::scope(std::string_view name) const {
  return ParamView(*store_, full(name));
}

std::string ParamView::full(std::string_view name) const {
  if (prefix_.empty()) return std::string(name);
  return prefix_ + "." + std::string(name);
}

const Tensor& ParamView::operator()(std::string_view name) const {
  return store_->get(full(name));
}

const Tensor& ParamView::weight(std::string_view conv) const {
  return store_->get(full(conv) + ".weight");
}

Tensor ParamView::bias(std::string_view conv) const {
  const std::string name = full(conv) + ".bias";
  if (!store_->contains(name)) return Tensor();
  return store_->get(name);
}

nn::SEParams ParamView::se(std::string_view name) const {
  ParamView s = scope(name);
  return nn::SEParams{s.weight("reduce"), s.bias("reduce"), s.weight("expand"),
                      s.bias("expand")};
}

Tensor apply_conv(const ParamView& p, std::string_view name,
                  const nn::ConvSpec& spec, const Tensor& x) {
  return nn::conv2d(x, spec, p.weight(name), p.bias(name));
}

Tensor apply_norm(const ParamView& p, std::string_view name, const Tensor& x) {
  ParamView s = p.scope(name);
  return nn::layer_norm(x, s("gamma"), s("beta"));
}

}  // namespace dualformer
