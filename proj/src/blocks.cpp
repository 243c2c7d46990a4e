// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/blocks.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dualformer/nn_ops.h"
#include "dualformer/ops.h"

namespace dualformer::blocks {

using nn::ConvSpec;

std::string_view to_string(AttnVariant v) {
  switch (v) {
    case AttnVariant::kCssa: return "cssa";
    case AttnVariant::kSsaOnly: return "ssa";
    case AttnVariant::kSsaNoDwconv: return "ssa_no_dwconv";
    case AttnVariant::kCsaOnly: return "csa";
  }
  return "?";
}

std::string_view to_string(Fusion v) {
  switch (v) {
    case Fusion::kAcm: return "acm";
    case Fusion::kSk: return "sk";
    case Fusion::kConcat: return "concat";
  }
  return "?";
}

std::string_view to_string(FfnVariant v) {
  switch (v) {
    case FfnVariant::kMbffn: return "mbffn";
    case FfnVariant::kMlp: return "mlp";
    case FfnVariant::kConvFfn: return "convffn";
    case FfnVariant::kLeff: return "leff";
  }
  return "?";
}

AttnVariant parse_attn_variant(std::string_view s) {
  if (s == "cssa") return AttnVariant::kCssa;
  if (s == "ssa" || s == "ssa_only") return AttnVariant::kSsaOnly;
  if (s == "ssa_no_dwconv") return AttnVariant::kSsaNoDwconv;
  if (s == "csa" || s == "csa_only") return AttnVariant::kCsaOnly;
  throw std::invalid_argument("unknown attention variant: " + std::string(s));
}

Fusion parse_fusion(std::string_view s) {
  if (s == "acm") return Fusion::kAcm;
  if (s == "sk") return Fusion::kSk;
  if (s == "concat") return Fusion::kConcat;
  throw std::invalid_argument("unknown fusion variant: " + std::string(s));
}

FfnVariant parse_ffn_variant(std::string_view s) {
  if (s == "mbffn") return FfnVariant::kMbffn;
  if (s == "mlp") return FfnVariant::kMlp;
  if (s == "convffn") return FfnVariant::kConvFfn;
  if (s == "leff") return FfnVariant::kLeff;
  throw std::invalid_argument("unknown ffn variant: " + std::string(s));
}

// ---------------------------------------------------------------------------
// LFE

void lfe_init(const LfeSpec& spec, const ParamBuilder& b) {
  const std::int64_t width = spec.width();
  b.conv("expand", ConvSpec::pointwise(spec.channels, width));
  b.conv("dw1", ConvSpec::depthwise(width, 3));
  b.norm("norm", width);
  b.conv("dw2", ConvSpec::depthwise(width, 3));
  if (spec.use_ca) b.se("ca", nn::SESpec{width, spec.se_reduction});
  b.conv("contract", ConvSpec::pointwise(width, spec.channels));
}

Tensor lfe_forward(const Tensor& x, const LfeSpec& spec, const ParamView& p) {
  if (x.shape().c != spec.channels) {
    throw ShapeError("lfe: input " + x.shape().str() + " expected " +
                     std::to_string(spec.channels) + " channels");
  }
  const std::int64_t width = spec.width();
  Tensor h = apply_conv(p, "expand", ConvSpec::pointwise(spec.channels, width), x);
  h = apply_conv(p, "dw1", ConvSpec::depthwise(width, 3), h);
  h = nn::gelu(apply_norm(p, "norm", h));
  h = apply_conv(p, "dw2", ConvSpec::depthwise(width, 3), h);
  if (spec.use_ca) {
    h = nn::channel_attention(h, nn::SESpec{width, spec.se_reduction},
                              p.se("ca"));
  }
  h = apply_conv(p, "contract", ConvSpec::pointwise(width, spec.channels), h);
  return add(x, h);
}

// ---------------------------------------------------------------------------
// Self-attention branches

double AttnSpec::scale() const {
  return 1.0 / std::sqrt(static_cast<double>(branch_channels));
}

void AttnSpec::validate() const {
  if (branch_channels < 1 || heads < 1 || branch_channels % heads != 0) {
    throw ShapeError("attention branch width " +
                     std::to_string(branch_channels) +
                     " is not divisible by heads " + std::to_string(heads));
  }
}

BranchKind channel_branch_kind(AttnVariant v) {
  switch (v) {
    case AttnVariant::kCssa:
    case AttnVariant::kCsaOnly: return BranchKind::kChannel;
    case AttnVariant::kSsaOnly: return BranchKind::kSpatial;
    case AttnVariant::kSsaNoDwconv: return BranchKind::kSpatialNoLocal;
  }
  return BranchKind::kChannel;
}

BranchKind spatial_branch_kind(AttnVariant v) {
  switch (v) {
    case AttnVariant::kCssa:
    case AttnVariant::kSsaOnly: return BranchKind::kSpatial;
    case AttnVariant::kSsaNoDwconv: return BranchKind::kSpatialNoLocal;
    case AttnVariant::kCsaOnly: return BranchKind::kChannel;
  }
  return BranchKind::kSpatial;
}

namespace {

// (N, q, H, W) -> (N, heads, q/heads, H*W)
Tensor to_heads(const Tensor& t, std::int64_t heads) {
  const Shape& s = t.shape();
  return reshape(t, Shape{s.n, heads, s.c / heads, s.h * s.w});
}

Tensor from_heads(const Tensor& t, const Shape& like) {
  return reshape(t, like);
}

void collect_maps(const Tensor& attn, AttentionMaps* maps) {
  if (maps == nullptr) return;
  const Shape& s = attn.shape();
  const Tensor a = attn.detach();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t h = 0; h < s.c; ++h) {
      std::vector<double> v(static_cast<std::size_t>(s.h * s.w));
      for (std::int64_t i = 0; i < s.h; ++i)
        for (std::int64_t j = 0; j < s.w; ++j)
          v[static_cast<std::size_t>(i * s.w + j)] = a.at(n, h, i, j);
      maps->maps.push_back(
          Tensor::from_values(Shape{1, 1, s.h, s.w}, v, DType::kF64));
    }
}

}  // namespace

void channel_attn_init(const AttnSpec& spec, const ParamBuilder& b) {
  spec.validate();
  const std::int64_t q = spec.branch_channels;
  b.conv("qkv", ConvSpec::pointwise(q, 3 * q));
  b.conv("qkv_dw", ConvSpec::depthwise(3 * q, 3));
}

Tensor channel_self_attention(const Tensor& x, const AttnSpec& spec,
                              const ParamView& p, AttentionMaps* maps) {
  spec.validate();
  const std::int64_t q = spec.branch_channels;
  if (x.shape().c != q) {
    throw ShapeError("channel attention: input " + x.shape().str() +
                     " expected " + std::to_string(q) + " channels");
  }
  Tensor qkv = apply_conv(p, "qkv", ConvSpec::pointwise(q, 3 * q), x);
  qkv = apply_conv(p, "qkv_dw", ConvSpec::depthwise(3 * q, 3), qkv);
  auto parts = split_channels(qkv, {q, q, q});
  const Tensor qh = to_heads(parts[0], spec.heads);
  const Tensor kh = to_heads(parts[1], spec.heads);
  const Tensor vh = to_heads(parts[2], spec.heads);
  // Rows are channels here, so Q K^T is the (d x d) channel Gram matrix.
  Tensor attn = nn::softmax(scale(matmul(qh, kh, false, true), spec.scale()), 2);
  collect_maps(attn, maps);
  Tensor out = matmul(attn, vh, true, false);
  return from_heads(out, x.shape());
}

void spatial_attn_init(const AttnSpec& spec, bool local_branch,
                       const ParamBuilder& b) {
  spec.validate();
  const std::int64_t q = spec.branch_channels;
  b.conv("qkv", ConvSpec::pointwise(q, 3 * q));
  if (local_branch) b.conv("local", ConvSpec::depthwise(q, 3));
}

Tensor spatial_self_attention(const Tensor& x, const AttnSpec& spec,
                              bool local_branch, const ParamView& p,
                              AttentionMaps* maps) {
  spec.validate();
  const std::int64_t q = spec.branch_channels;
  if (x.shape().c != q) {
    throw ShapeError("spatial attention: input " + x.shape().str() +
                     " expected " + std::to_string(q) + " channels");
  }
  Tensor qkv = apply_conv(p, "qkv", ConvSpec::pointwise(q, 3 * q), x);
  auto parts = split_channels(qkv, {q, q, q});
  const Tensor qh = to_heads(parts[0], spec.heads);
  const Tensor kh = to_heads(parts[1], spec.heads);
  const Tensor vh = to_heads(parts[2], spec.heads);
  Tensor attn = nn::softmax(scale(matmul(qh, kh, true, false), spec.scale()), 3);
  collect_maps(attn, maps);
  Tensor out = from_heads(matmul(vh, attn, false, true), x.shape());
  if (local_branch) {
    out = add(out, apply_conv(p, "local", ConvSpec::depthwise(q, 3), x));
  }
  return out;
}

namespace {

void branch_init(BranchKind kind, const AttnSpec& spec, const ParamBuilder& b) {
  if (kind == BranchKind::kChannel) {
    channel_attn_init(spec, b);
  } else {
    spatial_attn_init(spec, kind == BranchKind::kSpatial, b);
  }
}

Tensor branch_forward(BranchKind kind, const Tensor& x, const AttnSpec& spec,
                      const ParamView& p, AttentionMaps* maps) {
  if (kind == BranchKind::kChannel) {
    return channel_self_attention(x, spec, p, maps);
  }
  return spatial_self_attention(x, spec, kind == BranchKind::kSpatial, p, maps);
}

}  // namespace

// ---------------------------------------------------------------------------
// Fusion

void acm_init(std::int64_t q, const ParamBuilder& b) {
  b.conv("mix_pw", ConvSpec::pointwise(2 * q, q));
  b.conv("mix_conv", ConvSpec::dense(q, q, 3));
  b.conv("spatial1", ConvSpec::dense(q, std::max<std::int64_t>(1, q / 2), 3));
  b.conv("spatial2", ConvSpec::dense(std::max<std::int64_t>(1, q / 2), 1, 3));
  b.conv("cgc1", ConvSpec::dense(q, q, 3));
  b.conv("cgc2", ConvSpec::dense(q, q, 3));
}

Tensor acm_fuse(const Tensor& xc, const Tensor& xs, const ParamView& p,
                FusionGates* gates) {
  if (xc.shape() != xs.shape()) {
    throw ShapeError("acm: branch shapes differ, " + xc.shape().str() +
                     " vs " + xs.shape().str());
  }
  const std::int64_t q = xc.shape().c;
  const std::int64_t half = std::max<std::int64_t>(1, q / 2);
  Tensor xo = apply_conv(p, "mix_pw", ConvSpec::pointwise(2 * q, q),
                         concat_channels({xc, xs}));
  xo = apply_conv(p, "mix_conv", ConvSpec::dense(q, q, 3), xo);

  Tensor gs = apply_conv(p, "spatial1", ConvSpec::dense(q, half, 3), xo);
  gs = nn::sigmoid(
      apply_conv(p, "spatial2", ConvSpec::dense(half, 1, 3), nn::gelu(gs)));

  Tensor gc = apply_conv(p, "cgc1", ConvSpec::dense(q, q, 3),
                         nn::global_avg_pool(xo));
  gc = nn::sigmoid(apply_conv(p, "cgc2", ConvSpec::dense(q, q, 3), nn::gelu(gc)));

  if (gates != nullptr) {
    gates->spatial = gs.detach();
    gates->channel = gc.detach();
  }
  return concat_channels({mul(xc, gs), mul(xs, gc)});
}

std::int64_t sk_hidden(std::int64_t q) {
  return std::max<std::int64_t>(q / 8, 4);
}

void sk_init(std::int64_t q, const ParamBuilder& b) {
  const std::int64_t d = sk_hidden(q);
  b.conv("fc1", ConvSpec::pointwise(q, d));
  b.conv("fc2", ConvSpec::pointwise(d, 2 * q));
  b.conv("proj", ConvSpec::pointwise(q, 2 * q));
}

Tensor sk_fuse(const Tensor& xc, const Tensor& xs, const ParamView& p,
               std::vector<Tensor>* branch_weights) {
  if (xc.shape() != xs.shape()) {
    throw ShapeError("sk: branch shapes differ, " + xc.shape().str() + " vs " +
                     xs.shape().str());
  }
  const std::int64_t q = xc.shape().c;
  const std::int64_t n = xc.shape().n;
  const std::int64_t d = sk_hidden(q);
  Tensor s = nn::global_avg_pool(add(xc, xs));
  s = nn::gelu(apply_conv(p, "fc1", ConvSpec::pointwise(q, d), s));
  s = apply_conv(p, "fc2", ConvSpec::pointwise(d, 2 * q), s);
  // (N, 2q, 1, 1) -> (N, 1, 2, q): softmax across the two branches.
  Tensor w = nn::softmax(reshape(s, Shape{n, 1, 2, q}), 2);
  auto ws = split_channels(reshape(w, Shape{n, 2 * q, 1, 1}), {q, q});
  if (branch_weights != nullptr) {
    branch_weights->push_back(ws[0].detach());
    branch_weights->push_back(ws[1].detach());
  }
  Tensor fused = add(mul(xc, ws[0]), mul(xs, ws[1]));
  return apply_conv(p, "proj", ConvSpec::pointwise(q, 2 * q), fused);
}

// ---------------------------------------------------------------------------
// Feed-forward variants

void FfnSpec::validate() const {
  if (channels < 1 || beta < 1) throw ShapeError("ffn: non-positive width");
  if (variant == FfnVariant::kMbffn && hidden() % 2 != 0) {
    throw ShapeError("mbffn: expanded width " + std::to_string(hidden()) +
                     " must be even for the simple gate");
  }
}

void ffn_init(const FfnSpec& spec, const ParamBuilder& b) {
  spec.validate();
  const std::int64_t c = spec.channels, e = spec.hidden();
  if (spec.prenorm) b.norm("norm", c);
  b.conv("expand", ConvSpec::pointwise(c, e));
  switch (spec.variant) {
    case FfnVariant::kMbffn:
      b.conv("branch3", ConvSpec::depthwise(e, 3));
      b.conv("branch5", ConvSpec::depthwise(e, 5));
      b.conv("contract", ConvSpec::pointwise(e / 2, c));
      break;
    case FfnVariant::kMlp:
      b.conv("contract", ConvSpec::pointwise(e, c));
      break;
    case FfnVariant::kConvFfn:
    case FfnVariant::kLeff:
      b.conv("dw", ConvSpec::depthwise(e, 3));
      b.conv("contract", ConvSpec::pointwise(e, c));
      break;
  }
}

Tensor ffn_forward(const Tensor& x, const FfnSpec& spec, const ParamView& p) {
  spec.validate();
  const std::int64_t c = spec.channels, e = spec.hidden();
  if (x.shape().c != c) {
    throw ShapeError("ffn: input " + x.shape().str() + " expected " +
                     std::to_string(c) + " channels");
  }
  Tensor h = spec.prenorm ? apply_norm(p, "norm", x) : x;
  h = apply_conv(p, "expand", ConvSpec::pointwise(c, e), h);
  switch (spec.variant) {
    case FfnVariant::kMbffn: {
      Tensor b3 = apply_conv(p, "branch3", ConvSpec::depthwise(e, 3), h);
      Tensor b5 = apply_conv(p, "branch5", ConvSpec::depthwise(e, 5), h);
      h = nn::simple_gate(add(add(b3, b5), h));
      h = apply_conv(p, "contract", ConvSpec::pointwise(e / 2, c), h);
      break;
    }
    case FfnVariant::kMlp:
      h = apply_conv(p, "contract", ConvSpec::pointwise(e, c), nn::gelu(h));
      break;
    case FfnVariant::kConvFfn:
      h = nn::gelu(apply_conv(p, "dw", ConvSpec::depthwise(e, 3), h));
      h = apply_conv(p, "contract", ConvSpec::pointwise(e, c), h);
      break;
    case FfnVariant::kLeff:
      h = nn::gelu(apply_conv(p, "dw", ConvSpec::depthwise(e, 3), nn::gelu(h)));
      h = apply_conv(p, "contract", ConvSpec::pointwise(e, c), h);
      break;
  }
  return add(x, h);
}

// ---------------------------------------------------------------------------
// HTB

AttnSpec HtbSpec::attn() const {
  return AttnSpec{branch_channels(), heads, attn_variant, fusion};
}

FfnSpec HtbSpec::ffn() const {
  return FfnSpec{global_channels(), ffn_beta, ffn_variant, prenorm};
}

LfeSpec HtbSpec::lfe() const {
  return LfeSpec{global_channels(), lfe_expand, se_reduction, lfe_use_ca};
}

void HtbSpec::validate() const {
  if (channels < 4 || channels % 4 != 0) {
    throw ShapeError("htb: channel count " + std::to_string(channels) +
                     " is not divisible by 4");
  }
  attn().validate();
  ffn().validate();
}

void htb_init(const HtbSpec& spec, const ParamBuilder& b) {
  spec.validate();
  const AttnSpec attn = spec.attn();
  const std::int64_t g = spec.global_channels();
  if (spec.prenorm) b.norm("norm1", g);
  branch_init(channel_branch_kind(spec.attn_variant), attn, b.scope("attn_c"));
  branch_init(spatial_branch_kind(spec.attn_variant), attn, b.scope("attn_s"));
  switch (spec.fusion) {
    case Fusion::kAcm: acm_init(attn.branch_channels, b.scope("fuse")); break;
    case Fusion::kSk: sk_init(attn.branch_channels, b.scope("fuse")); break;
    case Fusion::kConcat: break;
  }
  ffn_init(spec.ffn(), b.scope("ffn"));
  if (spec.use_parallel_lfe) lfe_init(spec.lfe(), b.scope("lfe"));
}

Tensor htb_forward(const Tensor& x, const HtbSpec& spec, const ParamView& p,
                   HtbTrace* trace) {
  spec.validate();
  if (x.shape().c != spec.channels) {
    throw ShapeError("htb: input " + x.shape().str() + " expected " +
                     std::to_string(spec.channels) + " channels");
  }
  const AttnSpec attn = spec.attn();
  const std::int64_t g = spec.global_channels();
  const std::int64_t q = spec.branch_channels();

  auto gp = split_channels(x, {g, g});
  const Tensor& xg = gp[0];
  const Tensor& xp = gp[1];
  Tensor h = spec.prenorm ? apply_norm(p, "norm1", xg) : xg;
  auto cs = split_channels(h, {q, q});
  if (trace != nullptr) {
    trace->x_global = xg.detach();
    trace->x_parallel = xp.detach();
    trace->x_c = cs[0].detach();
    trace->x_s = cs[1].detach();
  }
  Tensor ac = branch_forward(channel_branch_kind(spec.attn_variant), cs[0],
                             attn, p.scope("attn_c"),
                             trace ? &trace->channel_maps : nullptr);
  Tensor as = branch_forward(spatial_branch_kind(spec.attn_variant), cs[1],
                             attn, p.scope("attn_s"),
                             trace ? &trace->spatial_maps : nullptr);
  Tensor fused;
  switch (spec.fusion) {
    case Fusion::kAcm: fused = acm_fuse(ac, as, p.scope("fuse")); break;
    case Fusion::kSk: fused = sk_fuse(ac, as, p.scope("fuse")); break;
    case Fusion::kConcat: fused = concat_channels({ac, as}); break;
  }
  Tensor y = ffn_forward(add(xg, fused), spec.ffn(), p.scope("ffn"));
  Tensor local = spec.use_parallel_lfe ? lfe_forward(xp, spec.lfe(), p.scope("lfe"))
                                       : xp;
  return concat_channels({y, local});
}

}  // namespace dualformer::blocks
