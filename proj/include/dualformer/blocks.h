// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_BLOCKS_H_
#define DUALFORMER_BLOCKS_H_

#include <cstdint>
#include <string_view>
#include <vector>

#include "dualformer/params.h"
#include "dualformer/tensor.h"

namespace dualformer::blocks {

enum class AttnVariant { kCssa, kSsaOnly, kSsaNoDwconv, kCsaOnly };
enum class Fusion { kAcm, kSk, kConcat };
enum class FfnVariant { kMbffn, kMlp, kConvFfn, kLeff };

std::string_view to_string(AttnVariant v);
std::string_view to_string(Fusion v);
std::string_view to_string(FfnVariant v);
AttnVariant parse_attn_variant(std::string_view s);
Fusion parse_fusion(std::string_view s);
FfnVariant parse_ffn_variant(std::string_view s);

/// Local Feature Extraction block:
///   1x1 expand -> dw3x3 -> LayerNorm -> GELU -> dw3x3 -> [SE] -> 1x1
///   contract -> + x
/// The squeeze-excitation runs at the expanded width.
struct LfeSpec {
  std::int64_t channels = 1;
  std::int64_t expand = 2;
  std::int64_t se_reduction = 4;
  bool use_ca = true;
  std::int64_t width() const { return channels * expand; }
};

void lfe_init(const LfeSpec& spec, const ParamBuilder& b);
Tensor lfe_forward(const Tensor& x, const LfeSpec& spec, const ParamView& p);

/// Attention over one quarter-width branch of the latent feature.
struct AttnSpec {
  std::int64_t branch_channels = 1;
  std::int64_t heads = 1;
  AttnVariant variant = AttnVariant::kCssa;
  Fusion fusion = Fusion::kAcm;
  /// 1/sqrt(branch_channels), applied before the softmax for every head.
  double scale() const;
  void validate() const;
};

/// Which self-attention each quarter branch runs for a given variant.
enum class BranchKind { kChannel, kSpatial, kSpatialNoLocal };
BranchKind channel_branch_kind(AttnVariant v);
BranchKind spatial_branch_kind(AttnVariant v);

/// Attention matrices collected for inspection, one per head per batch
/// item, each shaped (1,1,rows,cols).
struct AttentionMaps {
  std::vector<Tensor> maps;
};

void channel_attn_init(const AttnSpec& spec, const ParamBuilder& b);
/// Q,K,V from a 1x1 projection followed by a 3x3 depthwise conv. Per head,
/// A = softmax over columns of (Q^T K) * scale, a (d x d) matrix with d =
/// branch/heads, and the output is V A.
Tensor channel_self_attention(const Tensor& x, const AttnSpec& spec,
                              const ParamView& p,
                              AttentionMaps* maps = nullptr);

void spatial_attn_init(const AttnSpec& spec, bool local_branch,
                       const ParamBuilder& b);
/// Q,K,V from a 1x1 projection. Per head A = row-softmax of (Q K^T) * scale
/// over the H*W tokens; output A V, plus a 3x3 depthwise conv of the input
/// when `local_branch`.
Tensor spatial_self_attention(const Tensor& x, const AttnSpec& spec,
                              bool local_branch, const ParamView& p,
                              AttentionMaps* maps = nullptr);

struct FusionGates {
  Tensor spatial;  // (N,1,H,W), scales the channel-attention branch
  Tensor channel;  // (N,q,1,1), scales the spatial-attention branch
};

void acm_init(std::int64_t branch_channels, const ParamBuilder& b);
/// Adaptive Control Module. Returns concat(xc * g_s, xs * g_c).
Tensor acm_fuse(const Tensor& xc, const Tensor& xs, const ParamView& p,
                FusionGates* gates = nullptr);

void sk_init(std::int64_t branch_channels, const ParamBuilder& b);
std::int64_t sk_hidden(std::int64_t branch_channels);
/// Selective-kernel fusion: per-channel softmax weights over the two
/// branches, weighted sum, then 1x1 projection to 2q channels.
Tensor sk_fuse(const Tensor& xc, const Tensor& xs, const ParamView& p,
               std::vector<Tensor>* branch_weights = nullptr);

struct FfnSpec {
  std::int64_t channels = 1;
  std::int64_t beta = 2;
  FfnVariant variant = FfnVariant::kMbffn;
  bool prenorm = false;  // LayerNorm on the input of the residual branch
  std::int64_t hidden() const { return beta * channels; }
  void validate() const;
};

void ffn_init(const FfnSpec& spec, const ParamBuilder& b);
Tensor ffn_forward(const Tensor& x, const FfnSpec& spec, const ParamView& p);

/// Hybrid Transformer Block over a latent map of `channels` channels.
struct HtbSpec {
  std::int64_t channels = 4;
  std::int64_t heads = 1;
  AttnVariant attn_variant = AttnVariant::kCssa;
  Fusion fusion = Fusion::kAcm;
  FfnVariant ffn_variant = FfnVariant::kMbffn;
  std::int64_t ffn_beta = 2;
  std::int64_t se_reduction = 4;
  std::int64_t lfe_expand = 2;
  bool use_parallel_lfe = true;
  bool lfe_use_ca = true;
  bool prenorm = true;

  std::int64_t global_channels() const { return channels / 2; }
  std::int64_t branch_channels() const { return channels / 4; }
  AttnSpec attn() const;
  FfnSpec ffn() const;
  LfeSpec lfe() const;
  void validate() const;
};

/// Optional intermediate values of one HTB forward.
struct HtbTrace {
  Tensor x_global, x_parallel, x_c, x_s;
  AttentionMaps channel_maps, spatial_maps;
};

void htb_init(const HtbSpec& spec, const ParamBuilder& b);
Tensor htb_forward(const Tensor& x, const HtbSpec& spec, const ParamView& p,
                   HtbTrace* trace = nullptr);

}  // namespace dualformer::blocks

#endif  // DUALFORMER_BLOCKS_H_
