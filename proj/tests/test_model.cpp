// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include <gtest/gtest.h>

#include <cmath>

#include "block_fixtures.h"
#include "dualformer/model.h"
#include "dualformer/nn_ops.h"
#include "dualformer/ops.h"

namespace dualformer {
namespace {

using nn::ConvSpec;
using testing::check_with_params;
using testing::max_abs_diff;
using testing::random_tensor;
using testing::randomized;

Tensor image(Shape s, std::uint64_t seed, DType dt = DType::kF64) {
  return random_tensor(s, seed, 0.0, 1.0, dt);
}

TEST(ModelShape, OutputMatchesInputForSeveralSizes) {
  const auto [model, params] = build(ModelConfig::tiny(), Rng(3), DType::kF64);
  for (Shape s : {Shape{1, 3, 32, 32}, Shape{1, 3, 64, 64}, Shape{2, 3, 96, 80},
                  Shape{1, 3, 16, 48}}) {
    EXPECT_EQ(model.forward(params, image(s, 1)).shape(), s) << s.str();
  }
}

TEST(ModelShape, RejectsSizesThatAreNotMultiplesOf16) {
  const auto [model, params] = build(ModelConfig::tiny(), Rng(3), DType::kF64);
  try {
    model.forward(params, image({1, 3, 40, 32}, 1));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("multiples of 16"), std::string::npos);
  }
  EXPECT_THROW(model.forward(params, image({1, 4, 32, 32}, 1)), ShapeError);
}

TEST(ModelShape, StageTapsHaveExpectedSizes) {
  const ModelConfig cfg = ModelConfig::tiny();
  const auto [model, params] = build(cfg, Rng(3), DType::kF64);
  StageTaps taps;
  model.forward(params, image({1, 3, 64, 48}, 2), &taps);
  EXPECT_EQ(taps.size(), model.stage_tags().size());
  EXPECT_EQ(taps.at("stem").shape(), (Shape{1, 8, 64, 48}));
  for (int i = 0; i < 4; ++i) {
    const Shape enc = taps.at("enc" + std::to_string(i)).shape();
    EXPECT_EQ(enc, (Shape{1, cfg.encoder_dims[i], 64 >> i, 48 >> i}));
    EXPECT_EQ(taps.at("dec" + std::to_string(i)).shape(), enc);
  }
  // The latent stage runs at one sixteenth of the input resolution.
  EXPECT_EQ(taps.at("latent_in").shape(), (Shape{1, 48, 4, 3}));
  EXPECT_EQ(taps.at("latent_after_htb2").shape(), (Shape{1, 48, 4, 3}));
  EXPECT_EQ(taps.at("output").shape(), (Shape{1, 3, 64, 48}));
}

TEST(ModelShape, FullConfigLatentSplitWidths) {
  const blocks::HtbSpec h = ModelConfig::full().htb();
  EXPECT_EQ(h.channels, 384);
  EXPECT_EQ(h.global_channels(), 192);
  EXPECT_EQ(h.branch_channels(), 96);
}

TEST(ModelShape, ForwardToStopsAtTag) {
  const auto [model, params] = build(ModelConfig::tiny(), Rng(5), DType::kF64);
  const Tensor x = image({1, 3, 32, 32}, 4);
  StageTaps taps;
  model.forward(params, x, &taps);
  for (const std::string& tag : model.stage_tags()) {
    EXPECT_TRUE(model.forward_to(params, x, tag).identical(taps.at(tag))) << tag;
  }
  EXPECT_THROW(model.forward_to(params, x, "enc9"), std::invalid_argument);
}

TEST(ModelInit, ZeroInitIsIdentity) {
  for (const char* sw : {"fusion=acm", "fusion=sk", "fusion=concat", "ffn=mlp"}) {
    ModelConfig cfg = variant(ModelConfig::tiny(), sw);
    const auto [model, params] = build(cfg, Rng(0), DType::kF64, InitMode::kZero);
    const Tensor x = image({1, 3, 32, 32}, 11);
    EXPECT_TRUE(model.forward(params, x).identical(x)) << sw;
  }
  ModelConfig cfg = ModelConfig::tiny();
  cfg.upsample_mode = UpsampleMode::kTransposed;
  cfg.skip_mode = SkipMode::kConcat;
  const auto [model, params] = build(cfg, Rng(0), DType::kF32, InitMode::kZero);
  const Tensor x = image({2, 3, 16, 32}, 12, DType::kF32);
  EXPECT_TRUE(model.forward(params, x).identical(x));
}

TEST(ModelInit, EqualSeedsGiveBitwiseEqualModels) {
  const auto a = build(ModelConfig::tiny(), Rng(77));
  const auto b = build(ModelConfig::tiny(), Rng(77));
  const auto c = build(ModelConfig::tiny(), Rng(78));
  EXPECT_TRUE(a.second.identical(b.second));
  EXPECT_FALSE(a.second.identical(c.second));
  const Tensor x = image({1, 3, 32, 32}, 5, DType::kF32);
  EXPECT_TRUE(a.first.forward(a.second, x).identical(b.first.forward(b.second, x)));
}

TEST(ModelInit, ActivationsStayBoundedAtInit) {
  const auto [model, params] = build(ModelConfig::tiny(), Rng(9), DType::kF32);
  StageTaps taps;
  model.forward(params, image({1, 3, 32, 32}, 8, DType::kF32), &taps);
  for (const auto& [tag, t] : taps) {
    ASSERT_TRUE(all_finite(t)) << tag;
    for (double v : t.to_vector()) ASSERT_LT(std::abs(v), 1e6) << tag;
  }
}

TEST(ModelInit, ParameterNamesFollowTheLayout) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.skip_mode = SkipMode::kConcat;
  const ParamStore p = Model(cfg).init_params(Rng(0), DType::kF32);
  for (const char* name :
       {"stem.weight", "enc0.lfe0.expand.weight", "enc3.lfe1.ca.reduce.weight",
        "down3.bias", "latent.htb1.attn_c.qkv_dw.weight", "latent.htb0.fuse.cgc2.weight",
        "latent.htb0.lfe.contract.bias", "up0.weight", "skip2.weight",
        "dec3.lfe1.dw2.weight", "dec0.lfe0.contract.weight", "head.bias"}) {
    EXPECT_TRUE(p.contains(name)) << name;
  }
  EXPECT_FALSE(p.contains("dec0.lfe1.expand.weight"));
  EXPECT_EQ(p.entries().front().first, "stem.weight");
  EXPECT_EQ(p.entries().back().first, "head.bias");
}

// Rebuilds the tiny forward pass by hand from the block functions.
TEST(ModelForward, MatchesCompositionOracle) {
  const ModelConfig c = ModelConfig::tiny();
  const Model model(c);
  const ParamStore p = randomized(model.init_params(Rng(0), DType::kF64), 21, -0.3, 0.3);
  const Tensor x = image({1, 3, 32, 32}, 22);
  const ParamView v(p);

  Tensor h = apply_conv(v, "stem", ConvSpec::dense(3, 8, 3), x);
  std::vector<Tensor> skips;
  const std::vector<std::int64_t> widths = {8, 12, 16, 24, 48};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < c.encoder_depths[i]; ++j) {
      h = blocks::lfe_forward(h, c.encoder_lfe(i),
                              v.scope("enc" + std::to_string(i) + ".lfe" + std::to_string(j)));
    }
    skips.push_back(h);
    h = apply_conv(v, "down" + std::to_string(i),
                   ConvSpec::dense(widths[i], widths[i + 1], 3, 2), h);
  }
  for (int k = 0; k < 2; ++k) {
    h = blocks::htb_forward(h, c.htb(), v.scope("latent.htb" + std::to_string(k)));
  }
  const std::vector<int> dec_depth = {1, 1, 2, 2};  // stage 0..3
  for (int i = 3; i >= 0; --i) {
    h = apply_conv(v, "up" + std::to_string(i), ConvSpec::dense(widths[i + 1], widths[i], 3),
                   nn::upsample_nearest2x(h));
    h = add(h, skips[i]);
    for (int j = 0; j < dec_depth[i]; ++j) {
      h = blocks::lfe_forward(h, c.decoder_lfe(i),
                              v.scope("dec" + std::to_string(i) + ".lfe" + std::to_string(j)));
    }
  }
  const Tensor expected = add(apply_conv(v, "head", ConvSpec::dense(8, 3, 3), h), x);
  EXPECT_EQ(max_abs_diff(model.forward(p, x), expected), 0.0);
}

TEST(ModelGrad, TinyEndToEndPassesAt1em3) {
  const Model model(ModelConfig::tiny());
  // Wider parameter ranges blow activations up until central differences
  // drown in rounding noise, which says nothing about the backward pass.
  const ParamStore p = randomized(model.init_params(Rng(0), DType::kF64), 31, -0.2, 0.2);
  GradCheckOptions opts;
  opts.tol = 1e-3;
  opts.max_coords_per_input = 3;
  const auto report = check_with_params(
      [&](const Tensor& x, const ParamStore& ps) { return model.forward(ps, x); },
      image({1, 3, 16, 16}, 32), p, opts);
  EXPECT_TRUE(report.passed) << report.summary();
  EXPECT_GT(report.coords_checked, 2 * static_cast<std::int64_t>(p.size()));
}

// ------------------------------------------------------------ configuration

TEST(ModelConfigJson, RoundTripIsExactAndHashStable) {
  ModelConfig c = variant(ModelConfig::full(), "fusion=sk");
  c.skip_mode = SkipMode::kConcat;
  const std::string text = to_canonical_json(c);
  const ModelConfig back = config_from_json(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(to_canonical_json(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_NE(config_hash(c), config_hash(ModelConfig::full()));
  EXPECT_EQ(hash_hex(config_hash(c)).size(), 16u);
}

TEST(ModelConfigJson, PartialDocumentsKeepBaseValues) {
  const ModelConfig c = config_from_json(R"({"latent_depth": 3, "attn_variant": "ssa"})");
  EXPECT_EQ(c.latent_depth, 3);
  EXPECT_EQ(c.attn_variant, blocks::AttnVariant::kSsaOnly);
  EXPECT_EQ(c.encoder_dims, ModelConfig::full().encoder_dims);
}

TEST(ModelConfigJson, StrictParsingRejectsBadInput) {
  EXPECT_THROW(config_from_json(R"({"latent_dimm": 384})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"latent_dim": "big"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"fusion": "mean"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"latent_dim": 100})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"encoder_dims": [1, 2, 3]})"), ConfigError);
  EXPECT_THROW(config_from_json("[1, 2]"), ConfigError);
  EXPECT_THROW(config_from_json("{not json"), ConfigError);
}

TEST(ModelConfigVariant, SwitchesChangeOnlyTheirField) {
  const ModelConfig base = ModelConfig::full();
  EXPECT_EQ(variant(base, "fusion", "concat").fusion, blocks::Fusion::kConcat);
  EXPECT_FALSE(variant(base, "lfe_ca=off").lfe_use_ca);
  EXPECT_FALSE(variant(base, "htb_lfe=off").htb_use_lfe);
  EXPECT_EQ(variant(base, "ffn=leff").ffn_variant, blocks::FfnVariant::kLeff);
  EXPECT_EQ(variant(base, "attn=ssa_no_dwconv").attn_variant,
            blocks::AttnVariant::kSsaNoDwconv);
  ModelConfig back = variant(base, "fusion=concat");
  back.fusion = base.fusion;
  EXPECT_EQ(back, base);
  EXPECT_EQ(variant(base, "fusion=acm"), base);
  EXPECT_THROW(variant(base, "fusoin=acm"), ConfigError);
  EXPECT_THROW(variant(base, "lfe_ca=maybe"), ConfigError);
  EXPECT_THROW(variant(base, "fusion"), ConfigError);
}

}  // namespace
}  // namespace dualformer
