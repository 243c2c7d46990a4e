// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_MODEL_H_
#define DUALFORMER_MODEL_H_

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dualformer/blocks.h"
#include "dualformer/params.h"
#include "dualformer/rng.h"
#include "dualformer/tensor.h"

namespace dualformer {

/// Raised for any invalid configuration value or unknown key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class UpsampleMode { kResizeConv, kTransposed };
enum class SkipMode { kAdd, kConcat };

/// Every architectural hyperparameter. Stage-indexed vectors run from the
/// shallowest stage (0) to the deepest (3); `decoder_depths` is listed in
/// execution order, deepest stage first.
struct ModelConfig {
  std::vector<std::int64_t> encoder_dims{28, 32, 64, 128};
  std::vector<std::int64_t> encoder_depths{4, 5, 7, 8};
  std::int64_t latent_dim = 384;
  std::int64_t latent_depth = 14;
  std::int64_t heads = 8;
  std::int64_t ffn_beta = 2;
  std::vector<std::int64_t> lfe_expand{1, 2, 2, 2};
  std::vector<std::int64_t> decoder_lfe_expand{2, 2, 2, 2};
  std::int64_t se_reduction = 4;
  std::vector<std::int64_t> decoder_depths{8, 7, 5, 4};
  blocks::AttnVariant attn_variant = blocks::AttnVariant::kCssa;
  blocks::Fusion fusion = blocks::Fusion::kAcm;
  blocks::FfnVariant ffn_variant = blocks::FfnVariant::kMbffn;
  bool lfe_use_ca = true;
  bool htb_use_lfe = true;
  bool htb_prenorm = true;
  UpsampleMode upsample_mode = UpsampleMode::kResizeConv;
  SkipMode skip_mode = SkipMode::kAdd;
  std::array<double, 2> loss_lambda{1.0, 0.2};

  /// Full-size reference: dims [28,32,64,128], depths [4,5,7,8], latent
  /// 384 x 14 blocks, 8 heads. Same as a default-constructed config.
  static ModelConfig full();
  /// dims [8,12,16,24], depths [1,1,2,2], latent 48 x 2 blocks, 2 heads.
  static ModelConfig tiny();

  static constexpr int kStages = 4;
  /// Total downsampling factor; inputs must be multiples of it.
  static constexpr std::int64_t kStride = 16;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;
  blocks::HtbSpec htb() const;
  blocks::LfeSpec encoder_lfe(int stage) const;
  blocks::LfeSpec decoder_lfe(int stage) const;
  /// Number of LFE blocks in the decoder stage at `stage` (0 = shallowest).
  std::int64_t decoder_depth(int stage) const;

  bool operator==(const ModelConfig&) const = default;
};

/// Canonical JSON (sorted keys, no whitespace). Equal configs give equal
/// text, so the FNV-1a digest of it identifies a configuration.
std::string to_canonical_json(const ModelConfig& c);
/// Strict parse: unknown keys and wrong types raise ConfigError. Keys that
/// are absent keep their `base` values.
ModelConfig config_from_json(std::string_view text,
                             const ModelConfig& base = ModelConfig::full());
std::uint64_t config_hash(const ModelConfig& c);
std::string hash_hex(std::uint64_t h);

/// Applies one "key=value" ablation switch. Keys: attn (cssa|ssa|
/// ssa_no_dwconv|csa), fusion (acm|sk|concat), ffn (mbffn|mlp|convffn|leff),
/// lfe_ca (on|off), htb_lfe (on|off).
ModelConfig variant(const ModelConfig& base, std::string_view key,
                    std::string_view value);
/// Same, for a "key=value" string.
ModelConfig variant(const ModelConfig& base, std::string_view switch_expr);

/// Intermediate feature maps, keyed by stage tag. Tags, in execution order:
///   stem, enc0..enc3 (after each encoder stage's LFE stack), latent_in,
///   latent_after_htb1..latent_after_htbK, dec3..dec0, output.
using StageTaps = std::map<std::string, Tensor>;

class Model {
 public:
  explicit Model(ModelConfig config);
  const ModelConfig& config() const { return config_; }

  /// Registers every parameter, each drawn from `rng` split by its name.
  ParamStore init_params(const Rng& rng, DType dtype,
                         InitMode mode = InitMode::kFanIn) const;

  /// J = head(decoder(latent(encoder(I)))) + I. H and W must be multiples
  /// of 16.
  Tensor forward(const ParamStore& params, const Tensor& image,
                 StageTaps* taps = nullptr) const;
  /// Runs only as far as `tag` and returns that feature map.
  Tensor forward_to(const ParamStore& params, const Tensor& image,
                    std::string_view tag) const;

  std::vector<std::string> stage_tags() const;

 private:
  Tensor run(const ParamStore& params, const Tensor& image, StageTaps* taps,
             std::string_view stop) const;
  ModelConfig config_;
};

/// Builds a model and its deterministic initial parameters.
std::pair<Model, ParamStore> build(const ModelConfig& config, const Rng& rng,
                                   DType dtype = DType::kF32,
                                   InitMode mode = InitMode::kFanIn);

}  // namespace dualformer

#endif  // DUALFORMER_MODEL_H_
