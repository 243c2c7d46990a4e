// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/model.h"

#include <algorithm>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "dualformer/nn_ops.h"
#include "dualformer/ops.h"

namespace dualformer {

using blocks::AttnVariant;
using blocks::FfnVariant;
using blocks::Fusion;
using json = nlohmann::json;
using nn::ConvSpec;

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.encoder_dims = {8, 12, 16, 24};
  c.encoder_depths = {1, 1, 2, 2};
  c.latent_dim = 48;
  c.latent_depth = 2;
  c.heads = 2;
  c.decoder_depths = {2, 2, 1, 1};
  return c;
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("invalid model config: " + msg);
}

void require_stage_vector(const std::vector<std::int64_t>& v, const char* name,
                          std::int64_t min_value) {
  require(v.size() == ModelConfig::kStages,
          std::string(name) + " must have 4 entries");
  for (std::int64_t x : v) {
    require(x >= min_value, std::string(name) + " entries must be >= " +
                                std::to_string(min_value));
  }
}

}  // namespace

void ModelConfig::validate() const {
  require_stage_vector(encoder_dims, "encoder_dims", 1);
  require_stage_vector(encoder_depths, "encoder_depths", 0);
  require_stage_vector(lfe_expand, "lfe_expand", 1);
  require_stage_vector(decoder_lfe_expand, "decoder_lfe_expand", 1);
  require_stage_vector(decoder_depths, "decoder_depths", 0);
  require(latent_depth >= 0, "latent_depth must be >= 0");
  require(heads >= 1, "heads must be >= 1");
  require(latent_dim >= 4 && latent_dim % (4 * heads) == 0,
          "latent_dim " + std::to_string(latent_dim) +
              " must be divisible by 4*heads = " + std::to_string(4 * heads));
  require(ffn_beta >= 1, "ffn_beta must be >= 1");
  require(se_reduction >= 1, "se_reduction must be >= 1");
  require(loss_lambda[0] >= 0 && loss_lambda[1] >= 0 &&
              (loss_lambda[0] > 0 || loss_lambda[1] > 0),
          "loss_lambda must be non-negative with one positive entry");
  try {
    htb().validate();
  } catch (const ShapeError& e) {
    require(false, e.what());
  }
  if (lfe_use_ca) {
    auto check = [&](const blocks::LfeSpec& s, const std::string& where) {
      require(s.width() % se_reduction == 0,
              where + " LFE width " + std::to_string(s.width()) +
                  " is not divisible by se_reduction " +
                  std::to_string(se_reduction));
    };
    for (int i = 0; i < kStages; ++i) {
      check(encoder_lfe(i), "encoder stage " + std::to_string(i));
      check(decoder_lfe(i), "decoder stage " + std::to_string(i));
    }
    if (htb_use_lfe) check(htb().lfe(), "latent");
  }
}

blocks::HtbSpec ModelConfig::htb() const {
  blocks::HtbSpec s;
  s.channels = latent_dim;
  s.heads = heads;
  s.attn_variant = attn_variant;
  s.fusion = fusion;
  s.ffn_variant = ffn_variant;
  s.ffn_beta = ffn_beta;
  s.se_reduction = se_reduction;
  s.lfe_expand = 2;
  s.use_parallel_lfe = htb_use_lfe;
  s.lfe_use_ca = lfe_use_ca;
  s.prenorm = htb_prenorm;
  return s;
}

blocks::LfeSpec ModelConfig::encoder_lfe(int stage) const {
  return blocks::LfeSpec{encoder_dims[stage], lfe_expand[stage], se_reduction,
                         lfe_use_ca};
}

blocks::LfeSpec ModelConfig::decoder_lfe(int stage) const {
  return blocks::LfeSpec{encoder_dims[stage], decoder_lfe_expand[stage],
                         se_reduction, lfe_use_ca};
}

std::int64_t ModelConfig::decoder_depth(int stage) const {
  return decoder_depths[kStages - 1 - stage];
}

// ---------------------------------------------------------------------------
// JSON

namespace {

const char* to_string(UpsampleMode m) {
  return m == UpsampleMode::kResizeConv ? "resize_conv" : "transposed";
}
const char* to_string(SkipMode m) {
  return m == SkipMode::kAdd ? "add" : "concat";
}

json to_json(const ModelConfig& c) {
  json j;
  j["encoder_dims"] = c.encoder_dims;
  j["encoder_depths"] = c.encoder_depths;
  j["latent_dim"] = c.latent_dim;
  j["latent_depth"] = c.latent_depth;
  j["heads"] = c.heads;
  j["ffn_beta"] = c.ffn_beta;
  j["lfe_expand"] = c.lfe_expand;
  j["decoder_lfe_expand"] = c.decoder_lfe_expand;
  j["se_reduction"] = c.se_reduction;
  j["decoder_depths"] = c.decoder_depths;
  j["attn_variant"] = std::string(blocks::to_string(c.attn_variant));
  j["fusion"] = std::string(blocks::to_string(c.fusion));
  j["ffn_variant"] = std::string(blocks::to_string(c.ffn_variant));
  j["lfe_use_ca"] = c.lfe_use_ca;
  j["htb_use_lfe"] = c.htb_use_lfe;
  j["htb_prenorm"] = c.htb_prenorm;
  j["upsample_mode"] = to_string(c.upsample_mode);
  j["skip_mode"] = to_string(c.skip_mode);
  j["loss_lambda"] = c.loss_lambda;
  return j;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::int64_t get_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) {
    throw ConfigError("config key '" + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

std::vector<std::int64_t> get_ints(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array");
  std::vector<std::int64_t> out;
  for (const json& e : v) out.push_back(get_int(e, key));
  return out;
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
  return v.get<bool>();
}

template <typename F>
auto parse_enum(const json& v, const std::string& key, F parse) {
  const auto s = get_as<std::string>(v, key);
  try {
    return parse(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

std::string to_canonical_json(const ModelConfig& c) { return to_json(c).dump(); }

ModelConfig config_from_json(std::string_view text, const ModelConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c = base;
  for (const auto& [key, v] : j.items()) {
    if (key == "encoder_dims") c.encoder_dims = get_ints(v, key);
    else if (key == "encoder_depths") c.encoder_depths = get_ints(v, key);
    else if (key == "latent_dim") c.latent_dim = get_int(v, key);
    else if (key == "latent_depth") c.latent_depth = get_int(v, key);
    else if (key == "heads") c.heads = get_int(v, key);
    else if (key == "ffn_beta") c.ffn_beta = get_int(v, key);
    else if (key == "lfe_expand") c.lfe_expand = get_ints(v, key);
    else if (key == "decoder_lfe_expand") c.decoder_lfe_expand = get_ints(v, key);
    else if (key == "se_reduction") c.se_reduction = get_int(v, key);
    else if (key == "decoder_depths") c.decoder_depths = get_ints(v, key);
    else if (key == "attn_variant") c.attn_variant = parse_enum(v, key, blocks::parse_attn_variant);
    else if (key == "fusion") c.fusion = parse_enum(v, key, blocks::parse_fusion);
    else if (key == "ffn_variant") c.ffn_variant = parse_enum(v, key, blocks::parse_ffn_variant);
    else if (key == "lfe_use_ca") c.lfe_use_ca = get_bool(v, key);
    else if (key == "htb_use_lfe") c.htb_use_lfe = get_bool(v, key);
    else if (key == "htb_prenorm") c.htb_prenorm = get_bool(v, key);
    else if (key == "upsample_mode") {
      const auto s = get_as<std::string>(v, key);
      if (s == "resize_conv") c.upsample_mode = UpsampleMode::kResizeConv;
      else if (s == "transposed") c.upsample_mode = UpsampleMode::kTransposed;
      else throw ConfigError("config key 'upsample_mode': unknown value " + s);
    } else if (key == "skip_mode") {
      const auto s = get_as<std::string>(v, key);
      if (s == "add") c.skip_mode = SkipMode::kAdd;
      else if (s == "concat") c.skip_mode = SkipMode::kConcat;
      else throw ConfigError("config key 'skip_mode': unknown value " + s);
    } else if (key == "loss_lambda") {
      if (!v.is_array() || v.size() != 2) {
        throw ConfigError("config key 'loss_lambda' must be a 2-element array");
      }
      for (int i = 0; i < 2; ++i) {
        if (!v[i].is_number()) throw ConfigError("config key 'loss_lambda' must be numeric");
        c.loss_lambda[i] = v[i].get<double>();
      }
    } else {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::uint64_t config_hash(const ModelConfig& c) {
  return fnv1a64(to_canonical_json(c));
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelConfig variant(const ModelConfig& base, std::string_view key,
                    std::string_view value) {
  ModelConfig c = base;
  auto on_off = [&](std::string_view k) {
    if (value == "on") return true;
    if (value == "off") return false;
    throw ConfigError("switch " + std::string(k) + " expects on|off, got " +
                      std::string(value));
  };
  try {
    if (key == "attn") c.attn_variant = blocks::parse_attn_variant(value);
    else if (key == "fusion") c.fusion = blocks::parse_fusion(value);
    else if (key == "ffn") c.ffn_variant = blocks::parse_ffn_variant(value);
    else if (key == "lfe_ca") c.lfe_use_ca = on_off(key);
    else if (key == "htb_lfe") c.htb_use_lfe = on_off(key);
    else throw ConfigError("unknown variant switch '" + std::string(key) + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ModelConfig variant(const ModelConfig& base, std::string_view expr) {
  const auto eq = expr.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("variant switch must look like key=value, got '" +
                      std::string(expr) + "'");
  }
  return variant(base, expr.substr(0, eq), expr.substr(eq + 1));
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::string idx(const char* prefix, std::int64_t i) {
  return prefix + std::to_string(i);
}

std::int64_t stage_out(const ModelConfig& c, int i) {
  return i + 1 < ModelConfig::kStages ? c.encoder_dims[i + 1] : c.latent_dim;
}

ConvSpec up_spec(const ModelConfig& c, int i) {
  return c.upsample_mode == UpsampleMode::kResizeConv
             ? ConvSpec::dense(stage_out(c, i), c.encoder_dims[i], 3)
             : ConvSpec::upsample2x(stage_out(c, i), c.encoder_dims[i]);
}

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
}

ParamStore Model::init_params(const Rng& rng, DType dtype, InitMode mode) const {
  const ModelConfig& c = config_;
  ParamStore store;
  const ParamBuilder root(store, rng, dtype, mode);
  root.conv("stem", ConvSpec::dense(3, c.encoder_dims[0], 3));
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    const ParamBuilder stage = root.scope(idx("enc", i));
    for (std::int64_t j = 0; j < c.encoder_depths[i]; ++j) {
      blocks::lfe_init(c.encoder_lfe(i), stage.scope(idx("lfe", j)));
    }
    root.conv(idx("down", i), ConvSpec::dense(c.encoder_dims[i], stage_out(c, i), 3, 2));
  }
  const ParamBuilder latent = root.scope("latent");
  for (std::int64_t k = 0; k < c.latent_depth; ++k) {
    blocks::htb_init(c.htb(), latent.scope(idx("htb", k)));
  }
  for (int i = ModelConfig::kStages - 1; i >= 0; --i) {
    root.conv(idx("up", i), up_spec(c, i));
    if (c.skip_mode == SkipMode::kConcat) {
      root.conv(idx("skip", i),
                ConvSpec::pointwise(2 * c.encoder_dims[i], c.encoder_dims[i]));
    }
    const ParamBuilder stage = root.scope(idx("dec", i));
    for (std::int64_t j = 0; j < c.decoder_depth(i); ++j) {
      blocks::lfe_init(c.decoder_lfe(i), stage.scope(idx("lfe", j)));
    }
  }
  root.conv("head", ConvSpec::dense(c.encoder_dims[0], 3, 3));
  return store;
}

std::vector<std::string> Model::stage_tags() const {
  std::vector<std::string> tags = {"stem"};
  for (int i = 0; i < ModelConfig::kStages; ++i) tags.push_back(idx("enc", i));
  tags.emplace_back("latent_in");
  for (std::int64_t k = 1; k <= config_.latent_depth; ++k) {
    tags.push_back(idx("latent_after_htb", k));
  }
  for (int i = ModelConfig::kStages - 1; i >= 0; --i) tags.push_back(idx("dec", i));
  tags.emplace_back("output");
  return tags;
}

Tensor Model::forward(const ParamStore& params, const Tensor& image,
                      StageTaps* taps) const {
  return run(params, image, taps, "output");
}

Tensor Model::forward_to(const ParamStore& params, const Tensor& image,
                         std::string_view tag) const {
  const auto tags = stage_tags();
  if (std::find(tags.begin(), tags.end(), tag) == tags.end()) {
    throw std::invalid_argument("unknown stage tag '" + std::string(tag) + "'");
  }
  return run(params, image, nullptr, tag);
}

Tensor Model::run(const ParamStore& params, const Tensor& image, StageTaps* taps,
                  std::string_view stop) const {
  const ModelConfig& c = config_;
  const Shape& s = image.shape();
  if (s.c != 3) {
    throw ShapeError("model input must have 3 channels, got " + s.str());
  }
  if (s.h % ModelConfig::kStride != 0 || s.w % ModelConfig::kStride != 0) {
    throw ShapeError("model input " + s.str() +
                     ": H and W must be multiples of 16; pad the image first");
  }
  const ParamView root(params);
  Tensor x;
  auto mark = [&](const std::string& tag) {
    if (taps != nullptr) (*taps)[tag] = x;
    return tag == stop;
  };

  x = apply_conv(root, "stem", ConvSpec::dense(3, c.encoder_dims[0], 3), image);
  if (mark("stem")) return x;

  std::vector<Tensor> skips(ModelConfig::kStages);
  for (int i = 0; i < ModelConfig::kStages; ++i) {
    const ParamView stage = root.scope(idx("enc", i));
    for (std::int64_t j = 0; j < c.encoder_depths[i]; ++j) {
      x = blocks::lfe_forward(x, c.encoder_lfe(i), stage.scope(idx("lfe", j)));
    }
    skips[i] = x;
    if (mark(idx("enc", i))) return x;
    x = apply_conv(root, idx("down", i),
                   ConvSpec::dense(c.encoder_dims[i], stage_out(c, i), 3, 2), x);
  }
  if (mark("latent_in")) return x;

  const blocks::HtbSpec htb = c.htb();
  const ParamView latent = root.scope("latent");
  for (std::int64_t k = 0; k < c.latent_depth; ++k) {
    x = blocks::htb_forward(x, htb, latent.scope(idx("htb", k)));
    if (mark(idx("latent_after_htb", k + 1))) return x;
  }

  for (int i = ModelConfig::kStages - 1; i >= 0; --i) {
    const ConvSpec up = up_spec(c, i);
    Tensor u = c.upsample_mode == UpsampleMode::kResizeConv
                   ? apply_conv(root, idx("up", i), up, nn::upsample_nearest2x(x))
                   : apply_conv(root, idx("up", i), up, x);
    if (c.skip_mode == SkipMode::kAdd) {
      x = add(u, skips[i]);
    } else {
      const std::int64_t d = c.encoder_dims[i];
      x = apply_conv(root, idx("skip", i), ConvSpec::pointwise(2 * d, d),
                     concat_channels({u, skips[i]}));
    }
    const ParamView stage = root.scope(idx("dec", i));
    for (std::int64_t j = 0; j < c.decoder_depth(i); ++j) {
      x = blocks::lfe_forward(x, c.decoder_lfe(i), stage.scope(idx("lfe", j)));
    }
    if (mark(idx("dec", i))) return x;
  }

  x = add(apply_conv(root, "head", ConvSpec::dense(c.encoder_dims[0], 3, 3), x),
          image);
  mark("output");
  return x;
}

std::pair<Model, ParamStore> build(const ModelConfig& config, const Rng& rng,
                                   DType dtype, InitMode mode) {
  Model model(config);
  ParamStore params = model.init_params(rng, dtype, mode);
  return {std::move(model), std::move(params)};
}

}  // namespace dualformer
