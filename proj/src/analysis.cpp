// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/analysis.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dualformer/ops.h"
#include "dualformer/rng.h"
#include "dualformer/tape.h"

namespace dualformer::analysis {

using blocks::AttnVariant;
using blocks::FfnVariant;
using blocks::Fusion;
using json = nlohmann::json;
using std::int64_t;

// ---------------------------------------------------------------------------
// Closed-form counts

int64_t conv_params(const nn::ConvSpec& s) {
  return s.kernel * s.kernel * s.in_channels * s.out_channels / s.groups +
         (s.bias ? s.out_channels : 0);
}

int64_t conv_macs(const nn::ConvSpec& s, int64_t h, int64_t w) {
  const int64_t per_pixel =
      s.kernel * s.kernel * s.in_channels * s.out_channels / s.groups;
  if (s.transposed) return per_pixel * h * w;  // each input pixel scatters once
  const int64_t p = s.pad();
  const int64_t ho = (h + 2 * p - s.kernel) / s.stride + 1;
  const int64_t wo = (w + 2 * p - s.kernel) / s.stride + 1;
  return per_pixel * ho * wo;
}

namespace {

struct Cost {
  int64_t params = 0, macs = 0;
  Cost& operator+=(const Cost& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
};

// Dense k x k conv with bias over `t` output pixels.
Cost dense(int64_t cin, int64_t cout, int64_t k, int64_t t) {
  return {k * k * cin * cout + cout, k * k * cin * cout * t};
}
Cost dwise(int64_t c, int64_t k, int64_t t) { return {k * k * c + c, k * k * c * t}; }
Cost norm(int64_t c) { return {2 * c, 0}; }

Cost se(int64_t c, int64_t reduction) {
  const int64_t h = c / reduction;
  return {c * h + h + h * c + c, 2 * c * h};
}

Cost lfe(int64_t c, int64_t expand, int64_t reduction, bool ca, int64_t t) {
  const int64_t w = expand * c;
  Cost k = dense(c, w, 1, t);
  k += dwise(w, 3, t);
  k += norm(w);
  k += dwise(w, 3, t);
  if (ca) k += se(w, reduction);
  k += dense(w, c, 1, t);
  return k;
}

Cost channel_branch(int64_t q, int64_t heads, int64_t t) {
  Cost k = dense(q, 3 * q, 1, t);
  k += dwise(3 * q, 3, t);
  const int64_t d = q / heads;
  k.macs += 2 * heads * d * d * t;  // Q K^T and the A-weighted values
  return k;
}

Cost spatial_branch(int64_t q, bool local, int64_t t) {
  Cost k = dense(q, 3 * q, 1, t);
  k.macs += 2 * t * t * q;
  if (local) k += dwise(q, 3, t);
  return k;
}

Cost branch(blocks::BranchKind kind, int64_t q, int64_t heads, int64_t t) {
  switch (kind) {
    case blocks::BranchKind::kChannel: return channel_branch(q, heads, t);
    case blocks::BranchKind::kSpatial: return spatial_branch(q, true, t);
    case blocks::BranchKind::kSpatialNoLocal: return spatial_branch(q, false, t);
  }
  return {};
}

Cost acm(int64_t q, int64_t t) {
  const int64_t half = std::max<int64_t>(1, q / 2);
  Cost k = dense(2 * q, q, 1, t);
  k += dense(q, q, 3, t);
  k += dense(q, half, 3, t);
  k += dense(half, 1, 3, t);
  k += dense(q, q, 3, 1);  // channel gate runs on the pooled 1x1 map
  k += dense(q, q, 3, 1);
  return k;
}

Cost sk(int64_t q, int64_t t) {
  const int64_t d = blocks::sk_hidden(q);
  Cost k = dense(q, d, 1, 1);
  k += dense(d, 2 * q, 1, 1);
  k += dense(q, 2 * q, 1, t);
  return k;
}

Cost ffn(int64_t c, int64_t beta, FfnVariant v, bool prenorm, int64_t t) {
  const int64_t e = beta * c;
  Cost k = prenorm ? norm(c) : Cost{};
  k += dense(c, e, 1, t);
  switch (v) {
    case FfnVariant::kMbffn:
      k += dwise(e, 3, t);
      k += dwise(e, 5, t);
      k += dense(e / 2, c, 1, t);
      break;
    case FfnVariant::kMlp:
      k += dense(e, c, 1, t);
      break;
    case FfnVariant::kConvFfn:
    case FfnVariant::kLeff:
      k += dwise(e, 3, t);
      k += dense(e, c, 1, t);
      break;
  }
  return k;
}

Cost htb(const blocks::HtbSpec& s, int64_t t) {
  const int64_t g = s.channels / 2, q = s.channels / 4;
  Cost k = s.prenorm ? norm(g) : Cost{};
  k += branch(blocks::channel_branch_kind(s.attn_variant), q, s.heads, t);
  k += branch(blocks::spatial_branch_kind(s.attn_variant), q, s.heads, t);
  if (s.fusion == Fusion::kAcm) k += acm(q, t);
  if (s.fusion == Fusion::kSk) k += sk(q, t);
  k += ffn(g, s.ffn_beta, s.ffn_variant, s.prenorm, t);
  if (s.use_parallel_lfe) k += lfe(g, s.lfe_expand, s.se_reduction, s.lfe_use_ca, t);
  return k;
}

}  // namespace

CostReport cost_report(const ModelConfig& c, int64_t height, int64_t width) {
  c.validate();
  if (height <= 0 || width <= 0 || height % ModelConfig::kStride != 0 ||
      width % ModelConfig::kStride != 0) {
    throw ShapeError("cost report resolution " + std::to_string(height) + "x" +
                     std::to_string(width) + " must be a positive multiple of 16");
  }
  CostReport r;
  r.config_hash = hash_hex(config_hash(c));
  r.height = height;
  r.width = width;
  auto row = [&](std::string path, Cost k) {
    r.rows.push_back({std::move(path), k.params, k.macs});
  };
  auto pixels = [&](int stage) {
    return (height >> stage) * (width >> stage);
  };
  const auto& d = c.encoder_dims;
  auto next_dim = [&](int i) { return i + 1 < 4 ? d[i + 1] : c.latent_dim; };

  row("stem", dense(3, d[0], 3, pixels(0)));
  for (int i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < c.encoder_depths[i]; ++j) {
      row("enc" + std::to_string(i) + ".lfe" + std::to_string(j),
          lfe(d[i], c.lfe_expand[i], c.se_reduction, c.lfe_use_ca, pixels(i)));
    }
    row("down" + std::to_string(i), dense(d[i], next_dim(i), 3, pixels(i + 1)));
  }
  const blocks::HtbSpec hs = c.htb();
  for (int64_t k = 0; k < c.latent_depth; ++k) {
    row("latent.htb" + std::to_string(k), htb(hs, pixels(4)));
  }
  for (int i = 3; i >= 0; --i) {
    const int64_t prev = next_dim(i);
    if (c.upsample_mode == UpsampleMode::kResizeConv) {
      row("up" + std::to_string(i), dense(prev, d[i], 3, pixels(i)));
    } else {
      // 2x2 stride-2 transposed: every coarse pixel writes a 2x2 patch.
      row("up" + std::to_string(i),
          Cost{4 * prev * d[i] + d[i], 4 * prev * d[i] * pixels(i + 1)});
    }
    if (c.skip_mode == SkipMode::kConcat) {
      row("skip" + std::to_string(i), dense(2 * d[i], d[i], 1, pixels(i)));
    }
    for (int64_t j = 0; j < c.decoder_depth(i); ++j) {
      row("dec" + std::to_string(i) + ".lfe" + std::to_string(j),
          lfe(d[i], c.decoder_lfe_expand[i], c.se_reduction, c.lfe_use_ca,
              pixels(i)));
    }
  }
  row("head", dense(d[0], 3, 3, pixels(0)));

  for (const CostRow& x : r.rows) {
    r.total_params += x.params;
    r.total_macs += x.macs;
  }
  return r;
}

CostReport mac_count(const Model& model, int64_t height, int64_t width) {
  return cost_report(model.config(), height, width);
}

CostReport param_count(const Model& model) {
  return cost_report(model.config(), 256, 256);
}

std::string CostReport::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["resolution"] = {height, width};
  j["convention"] = "MAC; flops_2x = 2*MAC; elementwise, softmax, norm, pooling excluded";
  json rows_json = json::array();
  for (const CostRow& r : rows) {
    rows_json.push_back({{"path", r.path}, {"params", r.params}, {"macs", r.macs}});
  }
  j["rows"] = rows_json;
  j["totals"] = {{"params", total_params}, {"macs", total_macs}, {"flops_2x", flops_2x()}};
  return j.dump(2);
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << "config " << config_hash << "  resolution " << height << "x" << width
     << "  (MAC convention; elementwise/softmax/norm/pooling excluded)\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-22s %14s %18s\n", "module", "params", "MACs");
  os << line;
  for (const CostRow& r : rows) {
    std::snprintf(line, sizeof(line), "%-22s %14lld %18lld\n", r.path.c_str(),
                  static_cast<long long>(r.params), static_cast<long long>(r.macs));
    os << line;
  }
  std::snprintf(line, sizeof(line),
                "%-22s %14lld %18lld\n%-22s %13.3fM %17.3fG  (2xMAC %.3fG)\n", "total",
                static_cast<long long>(total_params), static_cast<long long>(total_macs),
                "", total_params / 1e6, total_macs / 1e9, flops_2x() / 1e9);
  os << line;
  return os.str();
}

// ---------------------------------------------------------------------------
// Receptive-field interval propagation

namespace {

int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct Rect {
  int64_t r0, r1, c0, c1;
  bool global = false;
};

Rect unite(const Rect& a, const Rect& b) {
  if (a.global || b.global) return Rect{0, 0, 0, 0, true};
  return {std::min(a.r0, b.r0), std::max(a.r1, b.r1), std::min(a.c0, b.c0),
          std::max(a.c1, b.c1)};
}

enum class Kind { kStem, kEnc, kLatentIn, kHtb, kDec, kOutput };
struct Pos {
  Kind kind;
  int index = 0;
};

class FieldTracer {
 public:
  FieldTracer(const ModelConfig& c, int64_t height, int64_t width, bool clamp)
      : c_(c), height_(height), width_(width), clamp_(clamp) {}

  Rect back(Pos p, Rect r) const {
    if (r.global) return r;
    switch (p.kind) {
      case Kind::kOutput: {
        const Rect head = grow(r, 1, 0);
        return unite(back({Kind::kDec, 0}, head), r);  // global residual
      }
      case Kind::kDec: {
        const int i = p.index;
        r = lfe_stack(r, c_.decoder_depth(i), i);
        if (r.global) return r;
        const Rect skip = back({Kind::kEnc, i}, r);
        Rect up = c_.upsample_mode == UpsampleMode::kResizeConv ? grow(r, 1, i) : r;
        up = clip(halve(up), i + 1);
        Pos prev{Kind::kDec, i + 1};
        if (i == 3) {
          prev = c_.latent_depth > 0
                     ? Pos{Kind::kHtb, static_cast<int>(c_.latent_depth)}
                     : Pos{Kind::kLatentIn};
        }
        return unite(skip, back(prev, up));
      }
      case Kind::kHtb:
        return Rect{0, 0, 0, 0, true};
      case Kind::kLatentIn:
        return back({Kind::kEnc, 3}, down(r, 3));
      case Kind::kEnc: {
        const int i = p.index;
        r = lfe_stack(r, c_.encoder_depths[i], i);
        if (r.global) return r;
        if (i == 0) return back({Kind::kStem}, r);
        return back({Kind::kEnc, i - 1}, down(r, i - 1));
      }
      case Kind::kStem:
        return grow(r, 1, 0);
    }
    return r;
  }

  Rect clip(Rect r, int stage) const {
    if (!clamp_ || r.global) return r;
    const int64_t h = height_ >> stage, w = width_ >> stage;
    return {std::max<int64_t>(r.r0, 0), std::min(r.r1, h - 1),
            std::max<int64_t>(r.c0, 0), std::min(r.c1, w - 1)};
  }

 private:
  // Stride-1 "same" conv with radius `rad` at `stage` resolution.
  Rect grow(Rect r, int64_t rad, int stage) const {
    return clip({r.r0 - rad, r.r1 + rad, r.c0 - rad, r.c1 + rad}, stage);
  }
  // 3x3 stride-2 pad-1 conv whose input lives at `stage` resolution.
  Rect down(Rect r, int stage) const {
    return clip({2 * r.r0 - 1, 2 * r.r1 + 1, 2 * r.c0 - 1, 2 * r.c1 + 1}, stage);
  }
  static Rect halve(Rect r) {
    return {floor_div(r.r0, 2), floor_div(r.r1, 2), floor_div(r.c0, 2),
            floor_div(r.c1, 2)};
  }
  Rect lfe_stack(Rect r, int64_t depth, int stage) const {
    for (int64_t j = 0; j < depth; ++j) {
      if (c_.lfe_use_ca) return Rect{0, 0, 0, 0, true};  // pooled gate
      r = grow(grow(r, 1, stage), 1, stage);             // two 3x3 dwconvs
    }
    return r;
  }

  const ModelConfig& c_;
  int64_t height_, width_;
  bool clamp_;
};

Pos parse_tag(const ModelConfig& c, std::string_view tag) {
  auto number = [&](std::string_view prefix) -> int {
    if (tag.substr(0, prefix.size()) != prefix) return -1;
    const std::string rest(tag.substr(prefix.size()));
    if (rest.empty() || rest.find_first_not_of("0123456789") != std::string::npos) {
      return -1;
    }
    return std::stoi(rest);
  };
  if (tag == "stem") return {Kind::kStem};
  if (tag == "latent_in") return {Kind::kLatentIn};
  if (tag == "output") return {Kind::kOutput};
  int k = number("latent_after_htb");
  if (k >= 1 && k <= c.latent_depth) return {Kind::kHtb, k};
  k = number("enc");
  if (k >= 0 && k < 4) return {Kind::kEnc, k};
  k = number("dec");
  if (k >= 0 && k < 4) return {Kind::kDec, k};
  throw std::invalid_argument("unknown stage tag '" + std::string(tag) + "'");
}

int stage_of(const Pos& p) {
  switch (p.kind) {
    case Kind::kStem:
    case Kind::kOutput: return 0;
    case Kind::kEnc:
    case Kind::kDec: return p.index;
    case Kind::kLatentIn:
    case Kind::kHtb: return 4;
  }
  return 0;
}

}  // namespace

std::pair<int64_t, int64_t> stage_size(const ModelConfig& c, std::string_view tag,
                                       int64_t height, int64_t width) {
  const int s = stage_of(parse_tag(c, tag));
  return {height >> s, width >> s};
}

AnalyticField analytic_field(const ModelConfig& c, std::string_view tag, int64_t h,
                             int64_t w, int64_t height, int64_t width) {
  const Pos pos = parse_tag(c, tag);
  const auto [sh, sw] = stage_size(c, tag, height, width);
  if (h < 0 || w < 0 || h >= sh || w >= sw) {
    throw std::out_of_range("location (" + std::to_string(h) + "," + std::to_string(w) +
                            ") outside stage " + std::string(tag) + " of size " +
                            std::to_string(sh) + "x" + std::to_string(sw));
  }
  AnalyticField f;
  const Rect start{h, h, w, w};
  const Rect clamped = FieldTracer(c, height, width, true).back(pos, start);
  if (clamped.global) {
    f.global = true;
    f.window = {0, height - 1, 0, width - 1};
    return f;
  }
  f.window = {clamped.r0, clamped.r1, clamped.c0, clamped.c1};
  const Rect open = FieldTracer(c, height, width, false).back(pos, start);
  f.side = open.r1 - open.r0 + 1;
  return f;
}

// ---------------------------------------------------------------------------
// ERF probe

ErfMap erf(const Model& model, const ParamStore& params, std::string_view stage,
           const ErfOptions& o) {
  const ModelConfig& c = model.config();
  const auto [sh, sw] = stage_size(c, stage, o.height, o.width);
  ErfMap m;
  m.stage = std::string(stage);
  m.h = o.h < 0 ? sh / 2 : o.h;
  m.w = o.w < 0 ? sw / 2 : o.w;
  m.analytic = analytic_field(c, stage, m.h, m.w, o.height, o.width);
  if (o.probes < 1) throw std::invalid_argument("erf needs at least one probe");

  const DType dtype = params.entries().empty() ? DType::kF64
                                               : params.entries().front().second.dtype();
  const int64_t plane = o.height * o.width;
  std::vector<double> magnitude(static_cast<std::size_t>(plane), 0.0);
  const Rng root(o.seed);
  constexpr int kChunk = 10;
  for (int start = 0; start < o.probes; start += kChunk) {
    const int n = std::min(kChunk, o.probes - start);
    std::vector<double> input;
    input.reserve(static_cast<std::size_t>(n * 3 * plane));
    for (int k = 0; k < n; ++k) {
      Rng r = root.split(static_cast<std::uint64_t>(start + k));
      for (int64_t i = 0; i < 3 * plane; ++i) input.push_back(r.uniform());
    }
    Tape tape;
    const Tensor x = tape.watch(
        Tensor::from_values({n, 3, o.height, o.width}, input, dtype));
    const Tensor y = model.forward_to(params, x, stage);
    const Shape ys = y.shape();
    std::vector<double> mask(static_cast<std::size_t>(ys.numel()), 0.0);
    for (int64_t b = 0; b < ys.n; ++b)
      for (int64_t ch = 0; ch < ys.c; ++ch)
        mask[((b * ys.c + ch) * ys.h + m.h) * ys.w + m.w] = 1.0;
    const Tensor g =
        tape.backward(weighted_sum(y, Tensor::from_values(ys, mask, dtype))).of(x);
    const auto gv = g.to_vector();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t i = 0; i < plane; ++i)
          magnitude[i] += std::abs(gv[(b * 3 + ch) * plane + i]);
  }
  for (double& v : magnitude) v /= o.probes;
  m.grad_magnitude = Tensor::from_values({1, 1, o.height, o.width}, magnitude, DType::kF64);

  for (int64_t i = 0; i < plane; ++i) {
    if (magnitude[i] == 0.0) continue;
    ++m.support;
    if (!m.analytic.window.contains(i / o.width, i % o.width)) m.within_window = false;
  }
  m.support_fraction = static_cast<double>(m.support) / static_cast<double>(plane);
  return m;
}

std::string ErfMap::summary_json() const {
  json j;
  j["stage"] = stage;
  j["location"] = {h, w};
  j["support"] = support;
  j["support_fraction"] = support_fraction;
  if (analytic.global) {
    j["analytic_bound"] = "global";
  } else {
    j["analytic_bound"] = analytic.side;
  }
  j["analytic_window"] = {analytic.window.row0, analytic.window.row1,
                          analytic.window.col0, analytic.window.col1};
  j["within_window"] = within_window;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Sweep

SweepTable sweep(const Model& model, const std::vector<int64_t>& resolutions,
                 const ParamStore* params) {
  SweepTable t;
  t.config_hash = hash_hex(config_hash(model.config()));
  for (int64_t r : resolutions) {
    SweepRow row;
    row.resolution = r;
    row.macs = cost_report(model.config(), r, r).total_macs;
    if (params != nullptr) {
      const DType dtype = params->entries().front().second.dtype();
      const Tensor x = Rng(static_cast<std::uint64_t>(r))
                           .uniform_tensor({1, 3, r, r}, 0.0, 1.0, dtype);
      const auto t0 = std::chrono::steady_clock::now();
      model.forward(*params, x);
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();
    }
    t.rows.push_back(row);
  }
  return t;
}

std::string SweepTable::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  json rows_json = json::array();
  for (const SweepRow& r : rows) {
    json e = {{"resolution", r.resolution}, {"macs", r.macs}, {"flops_2x", 2 * r.macs}};
    if (r.seconds >= 0) e["seconds"] = r.seconds;
    rows_json.push_back(e);
  }
  j["rows"] = rows_json;
  return j.dump(2);
}

std::string SweepTable::to_text() const {
  std::ostringstream os;
  os << "config " << config_hash << "\n";
  char line[128];
  std::snprintf(line, sizeof(line), "%10s %16s %10s %10s\n", "resolution", "MACs",
                "GMAC", "seconds");
  os << line;
  for (const SweepRow& r : rows) {
    std::snprintf(line, sizeof(line), "%10lld %16lld %10.3f %10s\n",
                  static_cast<long long>(r.resolution), static_cast<long long>(r.macs),
                  r.macs / 1e9,
                  r.seconds >= 0 ? std::to_string(r.seconds).c_str() : "-");
    os << line;
  }
  return os.str();
}

}  // namespace dualformer::analysis
