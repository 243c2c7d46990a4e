// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/grad_suites.h"

#include <stdexcept>

#include "dualformer/blocks.h"
#include "dualformer/model.h"
#include "dualformer/nn_ops.h"
#include "dualformer/ops.h"
#include "dualformer/params.h"
#include "dualformer/rng.h"
#include "dualformer/tape.h"

namespace dualformer {
namespace {

using nn::ConvSpec;

constexpr double kOpTol = 1e-4;
constexpr double kModelTol = 1e-3;

Tensor draw(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  return rng.uniform_tensor(s, lo, hi, DType::kF64);
}

GradCheckOptions options(double tol, std::uint64_t seed, std::int64_t coords = 0) {
  GradCheckOptions o;
  o.tol = tol;
  o.seed = seed;
  o.max_coords_per_input = coords;
  return o;
}

// Inputs are passed through unchanged; f sees them as a vector.
GradUnit op_unit(std::string name, std::vector<Shape> shapes,
                 std::function<Tensor(const std::vector<Tensor>&)> f,
                 double lo = -1.0, double hi = 1.0) {
  GradUnit u{"op", name, kOpTol, {}};
  u.run = [name, shapes, f, lo, hi](std::uint64_t seed) {
    Rng rng = Rng(seed).split(name);
    std::vector<Tensor> xs;
    for (const Shape& s : shapes) xs.push_back(draw(rng, s, lo, hi));
    return grad_check(f, xs, options(kOpTol, seed));
  };
  return u;
}

// A parameterised unit: the input tensor plus every registered parameter
// are checked together. Parameters (biases included) are redrawn from
// U(-range, range) so that zero-initialised entries do not hide paths.
GradUnit param_unit(std::string scope, std::string name, double tol, Shape input,
                    std::function<void(const ParamBuilder&)> init,
                    std::function<Tensor(const Tensor&, const ParamView&)> f,
                    std::int64_t coords, double range = 0.5) {
  GradUnit u{std::move(scope), name, tol, {}};
  u.run = [=](std::uint64_t seed) {
    Rng rng = Rng(seed).split(name);
    ParamStore shapes;
    init(ParamBuilder(shapes, rng.split("init"), DType::kF64));
    std::vector<std::string> names;
    std::vector<Tensor> xs = {draw(rng, input)};
    for (const auto& [pname, t] : shapes.entries()) {
      names.push_back(pname);
      xs.push_back(rng.split(pname).uniform_tensor(t.shape(), -range, range, DType::kF64));
    }
    auto fn = [&](const std::vector<Tensor>& v) {
      ParamStore ps;
      for (std::size_t i = 0; i < names.size(); ++i) ps.add(names[i], v[i + 1]);
      return f(v[0], ParamView(ps));
    };
    return grad_check(fn, xs, options(tol, seed, coords));
  };
  return u;
}

Tensor conv_with(const std::vector<Tensor>& v, const ConvSpec& s) {
  return nn::conv2d(v[0], s, v[1], s.bias ? v[2] : Tensor());
}

std::vector<GradUnit> op_units() {
  std::vector<GradUnit> u;
  const Shape s{2, 3, 4, 5};
  u.push_back(op_unit("add", {s, s}, [](auto& v) { return add(v[0], v[1]); }));
  u.push_back(op_unit("add_broadcast", {s, {1, 3, 1, 1}}, [](auto& v) { return add(v[0], v[1]); }));
  u.push_back(op_unit("sub", {s, {2, 1, 4, 5}}, [](auto& v) { return sub(v[0], v[1]); }));
  u.push_back(op_unit("mul", {s, {2, 3, 1, 1}}, [](auto& v) { return mul(v[0], v[1]); }));
  u.push_back(op_unit("scale", {s}, [](auto& v) { return scale(v[0], -1.7); }));
  u.push_back(op_unit("add_scalar", {s}, [](auto& v) { return add_scalar(v[0], 0.3); }));
  u.push_back(op_unit("square", {s}, [](auto& v) { return square(v[0]); }));
  u.push_back(op_unit("abs", {s}, [](auto& v) { return abs(v[0]); }, 0.1, 1.0));
  u.push_back(op_unit("log", {s}, [](auto& v) { return log(v[0]); }, 0.2, 2.0));
  u.push_back(op_unit("clamp_min", {s}, [](auto& v) { return clamp_min(v[0], 0.5); }, 0.6, 2.0));
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const Shape a = ta ? Shape{2, 2, 4, 3} : Shape{2, 2, 3, 4};
      const Shape b = tb ? Shape{2, 2, 5, 4} : Shape{2, 2, 4, 5};
      u.push_back(op_unit("matmul_" + std::to_string(ta) + std::to_string(tb), {a, b},
                          [ta, tb](auto& v) { return matmul(v[0], v[1], ta, tb); }));
    }
  u.push_back(op_unit("reshape", {s}, [](auto& v) {
    return mul(reshape(v[0], {2, 1, 12, 5}), Tensor::full({1, 1, 12, 5}, 0.5, DType::kF64));
  }));
  u.push_back(op_unit("split_concat", {{1, 5, 3, 3}}, [](auto& v) {
    auto parts = split_channels(v[0], {2, 3});
    return concat_channels({square(parts[1]), parts[0]});
  }));
  u.push_back(op_unit("sum", {s}, [](auto& v) { return sum(v[0]); }));
  u.push_back(op_unit("mean", {s}, [](auto& v) { return mean(v[0]); }));
  u.push_back(op_unit("weighted_sum", {s}, [](auto& v) {
    return weighted_sum(v[0], Tensor::full({2, 3, 4, 5}, -0.25, DType::kF64));
  }));
  const std::vector<std::pair<std::string, ConvSpec>> convs = {
      {"conv_dense3", ConvSpec::dense(3, 4, 3)},
      {"conv_stride2", ConvSpec::dense(3, 2, 3, 2)},
      {"conv_pointwise", ConvSpec::pointwise(3, 5)},
      {"conv_depthwise3", ConvSpec::depthwise(3, 3)},
      {"conv_depthwise5", ConvSpec::depthwise(3, 5)},
      {"conv_transposed", ConvSpec::upsample2x(3, 2)},
  };
  for (const auto& [name, spec] : convs) {
    u.push_back(op_unit(name, {{2, 3, 6, 6}, spec.weight_shape(), {1, spec.out_channels, 1, 1}},
                        [spec](auto& v) { return conv_with(v, spec); }));
  }
  u.push_back(op_unit("layer_norm", {{2, 4, 3, 3}, {1, 4, 1, 1}, {1, 4, 1, 1}},
                      [](auto& v) { return nn::layer_norm(v[0], v[1], v[2]); }));
  u.push_back(op_unit("gelu", {s}, [](auto& v) { return nn::gelu(v[0]); }, -3.0, 3.0));
  u.push_back(op_unit("relu", {s}, [](auto& v) { return nn::relu(v[0]); }, 0.1, 1.0));
  u.push_back(op_unit("relu_negative", {s}, [](auto& v) { return nn::relu(v[0]); }, -1.0, -0.1));
  u.push_back(op_unit("sigmoid", {s}, [](auto& v) { return nn::sigmoid(v[0]); }, -4.0, 4.0));
  u.push_back(op_unit("softmax_axis2", {s}, [](auto& v) { return nn::softmax(v[0], 2); }, -3.0, 3.0));
  u.push_back(op_unit("softmax_axis3", {s}, [](auto& v) { return nn::softmax(v[0], 3); }, -3.0, 3.0));
  u.push_back(op_unit("global_avg_pool", {s}, [](auto& v) { return nn::global_avg_pool(v[0]); }));
  u.push_back(op_unit("upsample_nearest2x", {s}, [](auto& v) { return nn::upsample_nearest2x(v[0]); }));
  u.push_back(op_unit("simple_gate", {{2, 4, 3, 3}}, [](auto& v) { return nn::simple_gate(v[0]); }));
  u.push_back(op_unit("channel_attention",
                      {{2, 8, 3, 3}, {2, 8, 1, 1}, {1, 2, 1, 1}, {8, 2, 1, 1}, {1, 8, 1, 1}},
                      [](auto& v) {
                        return nn::channel_attention(v[0], nn::SESpec{8, 4},
                                                     nn::SEParams{v[1], v[2], v[3], v[4]});
                      }));
  return u;
}

std::vector<GradUnit> block_units() {
  using namespace blocks;
  constexpr std::int64_t kCoords = 24;
  std::vector<GradUnit> u;
  auto add_unit = [&](std::string name, Shape in, std::function<void(const ParamBuilder&)> init,
                      std::function<Tensor(const Tensor&, const ParamView&)> f) {
    u.push_back(param_unit("block", std::move(name), kOpTol, in, std::move(init), std::move(f),
                           kCoords));
  };
  for (bool ca : {true, false}) {
    const LfeSpec spec{4, 2, 4, ca};
    add_unit(ca ? "lfe" : "lfe_no_ca", {1, 4, 5, 5},
             [spec](const ParamBuilder& b) { lfe_init(spec, b); },
             [spec](const Tensor& x, const ParamView& p) { return lfe_forward(x, spec, p); });
  }
  const AttnSpec attn{4, 2, AttnVariant::kCssa, Fusion::kAcm};
  add_unit("channel_self_attention", {1, 4, 3, 3},
           [attn](const ParamBuilder& b) { channel_attn_init(attn, b); },
           [attn](const Tensor& x, const ParamView& p) { return channel_self_attention(x, attn, p); });
  for (bool local : {true, false}) {
    add_unit(local ? "spatial_self_attention" : "spatial_self_attention_no_dwconv", {1, 4, 3, 3},
             [attn, local](const ParamBuilder& b) { spatial_attn_init(attn, local, b); },
             [attn, local](const Tensor& x, const ParamView& p) {
               return spatial_self_attention(x, attn, local, p);
             });
  }
  // Fusions take the two branches stacked along channels as one input.
  add_unit("acm", {1, 8, 3, 3}, [](const ParamBuilder& b) { acm_init(4, b); },
           [](const Tensor& x, const ParamView& p) {
             auto h = split_channels(x, {4, 4});
             return acm_fuse(h[0], h[1], p);
           });
  add_unit("sk", {1, 8, 3, 3}, [](const ParamBuilder& b) { sk_init(4, b); },
           [](const Tensor& x, const ParamView& p) {
             auto h = split_channels(x, {4, 4});
             return sk_fuse(h[0], h[1], p);
           });
  for (FfnVariant v : {FfnVariant::kMbffn, FfnVariant::kMlp, FfnVariant::kConvFfn, FfnVariant::kLeff}) {
    const FfnSpec spec{4, 2, v, true};
    add_unit("ffn_" + std::string(to_string(v)), {1, 4, 3, 3},
             [spec](const ParamBuilder& b) { ffn_init(spec, b); },
             [spec](const Tensor& x, const ParamView& p) { return ffn_forward(x, spec, p); });
  }
  auto htb_unit = [&](std::string name, HtbSpec spec) {
    add_unit(std::move(name), {1, spec.channels, 3, 3},
             [spec](const ParamBuilder& b) { htb_init(spec, b); },
             [spec](const Tensor& x, const ParamView& p) { return htb_forward(x, spec, p); });
  };
  HtbSpec h;
  h.channels = 16;
  h.heads = 2;
  htb_unit("htb", h);
  HtbSpec hs = h;
  hs.fusion = Fusion::kSk;
  htb_unit("htb_sk", hs);
  HtbSpec hc = h;
  hc.fusion = Fusion::kConcat;
  hc.attn_variant = AttnVariant::kSsaOnly;
  hc.use_parallel_lfe = false;
  htb_unit("htb_concat_ssa_no_lfe", hc);
  return u;
}

std::vector<GradUnit> model_units() {
  GradUnit u{"model", "tiny_end_to_end", kModelTol, {}};
  u.run = [](std::uint64_t seed) {
    const Model model(ModelConfig::tiny());
    const ParamStore init = model.init_params(Rng(seed), DType::kF64);
    Rng rng = Rng(seed).split("tiny_end_to_end");
    std::vector<Tensor> xs = {rng.uniform_tensor({1, 3, 16, 16}, 0.0, 1.0, DType::kF64)};
    std::vector<std::string> names;
    // U(-0.2, 0.2) keeps activations moderate so that central differences
    // are not swamped by rounding.
    for (const auto& [name, t] : init.entries()) {
      names.push_back(name);
      xs.push_back(rng.split(name).uniform_tensor(t.shape(), -0.2, 0.2, DType::kF64));
    }
    auto fn = [&](const std::vector<Tensor>& v) {
      ParamStore ps;
      for (std::size_t i = 0; i < names.size(); ++i) ps.add(names[i], v[i + 1]);
      return model.forward(ps, v[0]);
    };
    return grad_check(fn, xs, options(kModelTol, seed, 3));
  };
  return {u};
}

// x^2 whose backward reports 3x instead of 2x.
Tensor corrupted_square(const Tensor& x) {
  const Tensor value = mul(x.detach(), x.detach());
  const Tensor saved = x.detach();
  return maybe_record(value, {x},
                      [saved](const Tensor& g) {
                        return std::vector<Tensor>{mul(g, scale(saved, 3.0))};
                      },
                      "corrupted_square");
}

}  // namespace

std::vector<GradUnit> grad_units(std::string_view scope) {
  if (scope == "op") return op_units();
  if (scope == "block") return block_units();
  if (scope == "model") return model_units();
  if (scope == "all") {
    std::vector<GradUnit> all = op_units();
    for (auto& u : block_units()) all.push_back(std::move(u));
    for (auto& u : model_units()) all.push_back(std::move(u));
    return all;
  }
  throw std::invalid_argument("unknown gradcheck scope '" + std::string(scope) +
                              "' (expected op|block|model|all)");
}

GradUnit corrupted_grad_unit() {
  return op_unit("corrupted_square", {{1, 2, 3, 3}},
                 [](auto& v) { return corrupted_square(v[0]); });
}

}  // namespace dualformer
