// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/training.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dualformer/io.h"
#include "dualformer/metrics.h"
#include "dualformer/nn_ops.h"
#include "dualformer/ops.h"
#include "dualformer/tape.h"

namespace dualformer::training {
namespace {

using json = nlohmann::json;

Tensor sample(const Tensor& x, std::int64_t n) {
  const Shape s = x.shape();
  const std::int64_t per = s.c * s.h * s.w;
  return dispatch(x.dtype(), [&]<typename T>() {
    const auto v = x.values<T>();
    return Tensor::from_buffer<T>({1, s.c, s.h, s.w},
                                  std::vector<T>(v.begin() + n * per, v.begin() + (n + 1) * per));
  });
}

Tensor stack(const std::vector<Tensor>& xs) {
  const Shape s = xs.front().shape();
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(s.numel() * xs.size()));
  for (const Tensor& x : xs) {
    const auto xv = x.to_vector();
    v.insert(v.end(), xv.begin(), xv.end());
  }
  return Tensor::from_values({static_cast<std::int64_t>(xs.size()), s.c, s.h, s.w},
                             v, xs.front().dtype());
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Losses

Tensor psnr_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("psnr_loss: " + pred.shape().str() + " vs " + target.shape().str());
  }
  const Tensor mse = clamp_min(mean(square(sub(pred, target))), 1e-12);
  return scale(log(mse), 10.0 / std::numbers::ln10);
}

RandomPyramid::RandomPyramid(std::uint64_t seed, std::vector<std::int64_t> widths,
                             std::int64_t in_channels) {
  require(!widths.empty(), "RandomPyramid needs at least one stage");
  Rng rng(seed);
  std::int64_t in = in_channels;
  for (std::size_t j = 0; j < widths.size(); ++j) {
    const auto spec = nn::ConvSpec::dense(in, widths[j], 3, j == 0 ? 1 : 2);
    // He-style scaling keeps activations from fading through the ReLUs.
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * in));
    Rng stream = rng.split(j);
    weights_.push_back(stream.uniform_tensor(spec.weight_shape(), -bound, bound, DType::kF64));
    biases_.push_back(stream.uniform_tensor({1, widths[j], 1, 1}, -0.1, 0.1, DType::kF64));
    specs_.push_back(spec);
    in = widths[j];
  }
}

std::vector<Tensor> RandomPyramid::features(const Tensor& x) const {
  std::vector<Tensor> out;
  Tensor h = x;
  for (std::size_t j = 0; j < specs_.size(); ++j) {
    h = nn::relu(nn::conv2d(h, specs_[j], weights_[j].to(x.dtype()),
                            biases_[j].to(x.dtype())));
    out.push_back(h);
  }
  return out;
}

void LossConfig::validate() const {
  require(std::isfinite(lambda_psnr) && std::isfinite(lambda_perceptual) &&
              lambda_psnr >= 0 && lambda_perceptual >= 0,
          "loss weights must be finite and non-negative");
  require(lambda_psnr > 0 || lambda_perceptual > 0,
          "at least one loss weight must be positive");
  if (lambda_perceptual > 0) {
    if (!extractor) {
      throw std::invalid_argument("perceptual loss enabled but no feature extractor is set");
    }
    require(!perceptual_layers.empty(), "perceptual_layers is empty");
    for (int l : perceptual_layers) {
      require(l >= 1 && l <= extractor->stages(),
              "perceptual layer " + std::to_string(l) + " outside 1.." +
                  std::to_string(extractor->stages()));
    }
  }
}

Tensor perceptual_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  if (!cfg.extractor) {
    throw std::invalid_argument("perceptual_loss: no feature extractor is set");
  }
  if (pred.shape() != target.shape()) {
    throw ShapeError("perceptual_loss: " + pred.shape().str() + " vs " +
                     target.shape().str());
  }
  const auto fp = cfg.extractor->features(pred);
  const auto ft = cfg.extractor->features(target.detach());
  Tensor total;
  for (int l : cfg.perceptual_layers) {
    if (l < 1 || l > static_cast<int>(fp.size())) {
      throw std::invalid_argument("perceptual layer " + std::to_string(l) + " out of range");
    }
    const Tensor term = mean(abs(sub(fp[l - 1], ft[l - 1])));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

LossTerms total_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  LossTerms t;
  const Tensor lp = psnr_loss(pred, target);
  t.psnr = lp.item();
  t.total = scale(lp, cfg.lambda_psnr);
  if (cfg.lambda_perceptual > 0) {
    const Tensor lq = perceptual_loss(pred, target, cfg);
    t.perceptual = lq.item();
    t.total = add(t.total, scale(lq, cfg.lambda_perceptual));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Optimisation

OptimState OptimState::for_params(const ParamStore& params, AdamConfig config) {
  OptimState s;
  s.config = config;
  // Moments are kept in float64 whatever the parameter precision.
  s.m = params.to(DType::kF64).zeros_like();
  s.v = s.m.zeros_like();
  return s;
}

void AdamConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ConfigError("adam needs betas in [0, 1) and eps > 0");
  }
}

void adam_step(ParamStore& params, const ParamStore& grads, OptimState& state, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  }
  const AdamConfig& c = state.config;
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  // Validate everything before touching any state so a failure leaves the
  // step unapplied.
  for (const auto& [name, p] : params.entries()) {
    const Tensor& g = grads.get(name);
    if (g.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient for " + name + " has shape " +
                       g.shape().str() + ", parameter " + p.shape().str());
    }
    if (!all_finite(g)) throw NumericError("non-finite gradient for parameter " + name);
  }
  for (const auto& [name, p] : params.entries()) {
    const auto g = grads.get(name).to_vector();
    auto m = state.m.get(name).to_vector();
    auto v = state.v.get(name).to_vector();
    auto w = p.to_vector();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
    }
    const Shape s = p.shape();
    const DType dt = p.dtype();
    state.m.set(name, Tensor::from_values(s, m, DType::kF64));
    state.v.set(name, Tensor::from_values(s, v, DType::kF64));
    params.set(name, Tensor::from_values(s, w, dt));
  }
  state.step = t;
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, const ScheduleConfig& cfg) {
  if (total_steps <= 0) return cfg.lr0;
  step = std::clamp<std::int64_t>(step, 0, total_steps);
  const std::int64_t cycles = std::max(1, cfg.cycles);
  const std::int64_t len = (total_steps + cycles - 1) / cycles;
  const std::int64_t idx = std::min(step / len, cycles - 1);
  const std::int64_t start = idx * len;
  const std::int64_t span = std::min(len, total_steps - start);
  const double frac = span > 0 ? static_cast<double>(step - start) / static_cast<double>(span) : 1.0;
  if (frac == 0.0) return cfg.lr0;  // exact at every restart
  return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// Synthetic data

std::string_view to_string(DegradeKind k) {
  switch (k) {
    case DegradeKind::kNoise: return "noise";
    case DegradeKind::kRain: return "rain";
    case DegradeKind::kHaze: return "haze";
    case DegradeKind::kSnow: return "snow";
  }
  return "?";
}

DegradeKind degrade_kind_from_string(std::string_view s) {
  for (auto k : {DegradeKind::kNoise, DegradeKind::kRain, DegradeKind::kHaze, DegradeKind::kSnow}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown degradation '" + std::string(s) +
                              "' (expected noise|rain|haze|snow)");
}

void DegradeSpec::validate() const {
  require(std::isfinite(noise_sigma) && noise_sigma >= 0, "noise_sigma must be >= 0");
  require(rain_streaks >= 0, "rain_streaks must be >= 0");
  require(rain_length >= 1, "rain_length must be >= 1");
  require(std::isfinite(rain_angle_deg) && std::abs(rain_angle_deg) <= 90,
          "rain_angle_deg must lie in [-90, 90]");
  require(rain_intensity >= 0 && rain_intensity <= 1, "rain_intensity must lie in [0, 1]");
  require(haze_t >= 0 && haze_t <= 1, "haze_t must lie in [0, 1]");
  require(haze_airlight >= 0 && haze_airlight <= 1, "haze_airlight must lie in [0, 1]");
  require(snow_density >= 0 && snow_density <= 1, "snow_density must lie in [0, 1]");
  require(std::isfinite(snow_size) && snow_size > 0, "snow_size must be > 0");
}

Tensor degrade(const Tensor& clean, const DegradeSpec& spec) {
  spec.validate();
  const Shape s = clean.shape();
  const std::int64_t plane = s.plane();
  auto v = clean.to_vector();
  const Rng root(spec.seed);
  for (std::int64_t n = 0; n < s.n; ++n) {
    Rng rng = root.split(static_cast<std::uint64_t>(n));
    double* img = v.data() + n * s.c * plane;
    auto add_all = [&](std::int64_t y, std::int64_t x, double amount) {
      if (y < 0 || y >= s.h || x < 0 || x >= s.w) return;
      for (std::int64_t c = 0; c < s.c; ++c) img[c * plane + y * s.w + x] += amount;
    };
    switch (spec.kind) {
      case DegradeKind::kNoise:
        for (std::int64_t i = 0; i < s.c * plane; ++i) img[i] += spec.noise_sigma * rng.normal();
        break;
      case DegradeKind::kHaze:
        for (std::int64_t i = 0; i < s.c * plane; ++i) {
          img[i] = img[i] * spec.haze_t + spec.haze_airlight * (1.0 - spec.haze_t);
        }
        break;
      case DegradeKind::kRain: {
        const double a = spec.rain_angle_deg * std::numbers::pi / 180.0;
        for (std::int64_t k = 0; k < spec.rain_streaks; ++k) {
          const double y0 = rng.uniform(0, static_cast<double>(s.h));
          const double x0 = rng.uniform(0, static_cast<double>(s.w));
          const double amount = spec.rain_intensity * rng.uniform(0.6, 1.0);
          for (std::int64_t t = 0; t < spec.rain_length; ++t) {
            add_all(static_cast<std::int64_t>(std::floor(y0 + t * std::cos(a))),
                    static_cast<std::int64_t>(std::floor(x0 + t * std::sin(a))), amount);
          }
        }
        break;
      }
      case DegradeKind::kSnow: {
        const auto flakes = static_cast<std::int64_t>(
            std::llround(spec.snow_density * static_cast<double>(plane)));
        for (std::int64_t k = 0; k < flakes; ++k) {
          const double cy = rng.uniform(0, static_cast<double>(s.h));
          const double cx = rng.uniform(0, static_cast<double>(s.w));
          const double r = rng.uniform(0.5, std::max(0.5, spec.snow_size));
          const double b = rng.uniform(0.6, 1.0);
          const auto reach = static_cast<std::int64_t>(std::ceil(r));
          for (std::int64_t dy = -reach; dy <= reach; ++dy)
            for (std::int64_t dx = -reach; dx <= reach; ++dx) {
              const auto y = static_cast<std::int64_t>(std::floor(cy)) + dy;
              const auto x = static_cast<std::int64_t>(std::floor(cx)) + dx;
              const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
              if (d <= r) add_all(y, x, b * (1.0 - d / (r + 1.0)));
            }
        }
        break;
      }
    }
  }
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
  return Tensor::from_values(s, v, clean.dtype());
}

Tensor make_clean_batch(Rng& rng, std::int64_t batch, std::int64_t height,
                        std::int64_t width, DType dtype) {
  const std::int64_t plane = height * width;
  std::vector<double> v(static_cast<std::size_t>(batch * 3 * plane));
  for (std::int64_t n = 0; n < batch; ++n) {
    double* img = v.data() + n * 3 * plane;
    double lo[3], hi[3];
    for (int c = 0; c < 3; ++c) {
      lo[c] = rng.uniform(0.05, 0.5);
      hi[c] = rng.uniform(0.5, 0.95);
    }
    const auto kind = rng.below(3);
    if (kind == 0) {
      // Linear ramp in a random direction.
      const double theta = rng.uniform(0, 2 * std::numbers::pi);
      const double ux = std::cos(theta), uy = std::sin(theta);
      const double norm = std::abs(ux) * (width - 1) + std::abs(uy) * (height - 1);
      for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
          double t = (ux * x + uy * y) / std::max(norm, 1.0);
          t -= std::floor(t);
          for (int c = 0; c < 3; ++c) img[c * plane + y * width + x] = lo[c] + (hi[c] - lo[c]) * t;
        }
    } else if (kind == 1) {
      const std::int64_t cell = 4 << rng.below(2);
      for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
          const bool on = ((y / cell) + (x / cell)) % 2 == 0;
          for (int c = 0; c < 3; ++c) img[c * plane + y * width + x] = on ? hi[c] : lo[c];
        }
    } else {
      // Bilinear upsampling of a coarse 5x5 random grid per channel.
      constexpr int g = 5;
      for (int c = 0; c < 3; ++c) {
        double grid[g][g];
        for (auto& row : grid)
          for (double& e : row) e = rng.uniform(lo[c], hi[c]);
        for (std::int64_t y = 0; y < height; ++y)
          for (std::int64_t x = 0; x < width; ++x) {
            const double gy = static_cast<double>(y) * (g - 1) / std::max<std::int64_t>(height - 1, 1);
            const double gx = static_cast<double>(x) * (g - 1) / std::max<std::int64_t>(width - 1, 1);
            const int y0 = std::min(static_cast<int>(gy), g - 2);
            const int x0 = std::min(static_cast<int>(gx), g - 2);
            const double fy = gy - y0, fx = gx - x0;
            img[c * plane + y * width + x] =
                (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
          }
      }
    }
  }
  return Tensor::from_values({batch, 3, height, width}, v, dtype);
}

Tensor flip_horizontal(const Tensor& x) {
  const Shape s = x.shape();
  return dispatch(x.dtype(), [&]<typename T>() {
    const auto in = x.values<T>();
    std::vector<T> out(in.size());
    for (std::int64_t p = 0; p < s.n * s.c; ++p)
      for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t xx = 0; xx < s.w; ++xx)
          out[(p * s.h + y) * s.w + xx] = in[(p * s.h + y) * s.w + (s.w - 1 - xx)];
    return Tensor::from_buffer<T>(s, std::move(out));
  });
}

Tensor rot90(const Tensor& x, int k) {
  k = ((k % 4) + 4) % 4;
  Tensor cur = x;
  for (int r = 0; r < k; ++r) {
    const Shape s = cur.shape();
    const Shape o{s.n, s.c, s.w, s.h};
    cur = dispatch(cur.dtype(), [&]<typename T>() {
      const auto in = cur.values<T>();
      std::vector<T> out(in.size());
      // Counter-clockwise: out[i][j] = in[j][W - 1 - i].
      for (std::int64_t p = 0; p < s.n * s.c; ++p)
        for (std::int64_t i = 0; i < o.h; ++i)
          for (std::int64_t j = 0; j < o.w; ++j)
            out[(p * o.h + i) * o.w + j] = in[(p * s.h + j) * s.w + (s.w - 1 - i)];
      return Tensor::from_buffer<T>(o, std::move(out));
    });
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

json degrade_json(const DegradeSpec& d) {
  return json{{"kind", std::string(to_string(d.kind))},
              {"noise_sigma", d.noise_sigma},
              {"rain_streaks", d.rain_streaks},
              {"rain_angle_deg", d.rain_angle_deg},
              {"rain_length", d.rain_length},
              {"rain_intensity", d.rain_intensity},
              {"haze_t", d.haze_t},
              {"haze_airlight", d.haze_airlight},
              {"snow_density", d.snow_density},
              {"snow_size", d.snow_size},
              {"seed", d.seed}};
}

json train_json(const TrainConfig& c) {
  json j;
  j["model"] = json::parse(to_canonical_json(c.model));
  j["loss"] = json{{"lambda_psnr", c.loss.lambda_psnr},
                   {"lambda_perceptual", c.loss.lambda_perceptual},
                   {"perceptual_layers", c.loss.perceptual_layers},
                   {"extractor_seed", c.loss.extractor_seed}};
  j["adam"] = json{{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["schedule"] = json{{"lr0", c.schedule.lr0},
                       {"lr_min", c.schedule.lr_min},
                       {"cycles", c.schedule.cycles}};
  j["degrade"] = degrade_json(c.degrade);
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["size"] = c.size;
  j["heldout"] = c.heldout;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  return j;
}

// Strict field reader: every key of `obj` must be consumed by a handler.
template <typename Handlers>
void read_object(const json& obj, const std::string& where, const Handlers& handlers) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
  for (const auto& [key, val] : obj.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown key '" + where + "." + key + "'");
    try {
      it->second(val);
    } catch (const json::exception&) {
      throw ConfigError("key '" + where + "." + key + "' has the wrong type");
    }
  }
}

template <typename T>
std::function<void(const json&)> into(T& field) {
  return [&field](const json& v) {
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number, got " + v.dump());
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer, got " + v.dump());
    }
    field = v.get<T>();
  };
}

using Handlers = std::map<std::string, std::function<void(const json&)>>;

}  // namespace

std::string to_json(const TrainConfig& cfg) { return train_json(cfg).dump(); }

TrainConfig train_config_from_json(std::string_view text, const TrainConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed training config JSON: ") + e.what());
  }
  TrainConfig c = base;
  bool loss_weights_given = false;
  Handlers loss{
      {"lambda_psnr", [&](const json& v) { into(c.loss.lambda_psnr)(v); loss_weights_given = true; }},
      {"lambda_perceptual",
       [&](const json& v) { into(c.loss.lambda_perceptual)(v); loss_weights_given = true; }},
      {"perceptual_layers", into(c.loss.perceptual_layers)},
      {"extractor_seed", into(c.loss.extractor_seed)}};
  Handlers adam{{"beta1", into(c.adam.beta1)}, {"beta2", into(c.adam.beta2)}, {"eps", into(c.adam.eps)}};
  Handlers schedule{{"lr0", into(c.schedule.lr0)},
                    {"lr_min", into(c.schedule.lr_min)},
                    {"cycles", into(c.schedule.cycles)}};
  DegradeSpec& d = c.degrade;
  Handlers degrade{
      {"kind",
       [&](const json& v) {
         try {
           d.kind = degrade_kind_from_string(v.get<std::string>());
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"noise_sigma", into(d.noise_sigma)},       {"rain_streaks", into(d.rain_streaks)},
      {"rain_angle_deg", into(d.rain_angle_deg)}, {"rain_length", into(d.rain_length)},
      {"rain_intensity", into(d.rain_intensity)}, {"haze_t", into(d.haze_t)},
      {"haze_airlight", into(d.haze_airlight)},   {"snow_density", into(d.snow_density)},
      {"snow_size", into(d.snow_size)},           {"seed", into(d.seed)}};
  Handlers top{
      {"model", [&](const json& v) { c.model = config_from_json(v.dump(), base.model); }},
      {"loss", [&](const json& v) { read_object(v, "loss", loss); }},
      {"adam", [&](const json& v) { read_object(v, "adam", adam); }},
      {"schedule", [&](const json& v) { read_object(v, "schedule", schedule); }},
      {"degrade", [&](const json& v) { read_object(v, "degrade", degrade); }},
      {"steps", into(c.steps)},
      {"batch", into(c.batch)},
      {"size", into(c.size)},
      {"heldout", into(c.heldout)},
      {"eval_every", into(c.eval_every)},
      {"seed", into(c.seed)}};
  read_object(j, "config", top);

  if (loss_weights_given) {
    c.model.loss_lambda = {c.loss.lambda_psnr, c.loss.lambda_perceptual};
  } else {
    c.loss.lambda_psnr = c.model.loss_lambda[0];
    c.loss.lambda_perceptual = c.model.loss_lambda[1];
  }
  if (c.loss.extractor_seed != base.loss.extractor_seed || !c.loss.extractor) {
    c.loss.extractor = std::make_shared<RandomPyramid>(c.loss.extractor_seed);
  }
  try {
    c.model.validate();
    c.loss.validate();
    c.degrade.validate();
    c.adam.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.steps < 0 || c.batch < 1 || c.heldout < 1 || c.eval_every < 0) {
    throw ConfigError("steps >= 0, batch >= 1, heldout >= 1 and eval_every >= 0 are required");
  }
  if (c.size <= 0 || c.size % ModelConfig::kStride != 0) {
    throw ConfigError("size must be a positive multiple of 16");
  }
  if (!(c.schedule.lr0 > 0) || c.schedule.lr_min < 0 || c.schedule.cycles < 1) {
    throw ConfigError("schedule needs lr0 > 0, lr_min >= 0 and cycles >= 1");
  }
  return c;
}

std::string LogRow::to_json() const {
  json j{{"step", step}, {"lr", lr}, {"loss", loss}};
  if (psnr) j["psnr"] = *psnr;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Every random draw of the run is keyed off one root seed, split by purpose
// and then by step, so that resuming at any step replays the same data.
Rng run_rng(const TrainConfig& cfg, std::string_view purpose) {
  return Rng(cfg.seed).split(purpose);
}

struct Batch {
  Tensor clean, degraded;
};

Batch training_batch(const TrainConfig& cfg, std::int64_t step) {
  Rng rng = run_rng(cfg, "data").split(static_cast<std::uint64_t>(step));
  std::vector<Tensor> samples;
  for (std::int64_t b = 0; b < cfg.batch; ++b) {
    Tensor x = make_clean_batch(rng, 1, cfg.size, cfg.size);
    if (rng.below(2) == 1) x = flip_horizontal(x);
    x = rot90(x, static_cast<int>(rng.below(4)));
    samples.push_back(x);
  }
  Batch out;
  out.clean = stack(samples);
  DegradeSpec spec = cfg.degrade;
  spec.seed = rng.next_u64() ^ cfg.degrade.seed;
  out.degraded = degrade(out.clean, spec);
  return out;
}

}  // namespace

HeldOut heldout_set(const TrainConfig& cfg) {
  Rng rng = run_rng(cfg, "heldout");
  HeldOut h;
  h.clean = make_clean_batch(rng, cfg.heldout, cfg.size, cfg.size);
  DegradeSpec spec = cfg.degrade;
  spec.seed = rng.next_u64() ^ cfg.degrade.seed;
  h.degraded = degrade(h.clean, spec);
  return h;
}

std::pair<double, double> evaluate_heldout(const Model& model, const ParamStore& params,
                                           const HeldOut& set) {
  const Tensor out = model.forward(params, set.degraded.to(params.entries().front().second.dtype()));
  double restored = 0.0, degraded = 0.0;
  const std::int64_t n = set.clean.shape().n;
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor ref = sample(set.clean, i);
    restored += metrics::psnr(sample(out, i), ref);
    degraded += metrics::psnr(sample(set.degraded, i), ref);
  }
  return {restored / static_cast<double>(n), degraded / static_cast<double>(n)};
}

TrainState initial_state(const TrainConfig& cfg) {
  cfg.model.validate();
  TrainState s;
  s.params = Model(cfg.model).init_params(run_rng(cfg, "init"), DType::kF32);
  s.optim = OptimState::for_params(s.params, cfg.adam);
  return s;
}

void train_steps(const TrainConfig& cfg, TrainState& state, std::int64_t until,
                 const std::function<void(const LogRow&)>& sink) {
  cfg.loss.validate();
  const Model model(cfg.model);
  std::optional<HeldOut> held;
  for (std::int64_t step = state.optim.step; step < until; ++step) {
    const Batch batch = training_batch(cfg, step);
    LogRow row;
    row.step = step;
    row.lr = lr_schedule(step, cfg.steps, cfg.schedule);

    ParamStore grads;
    {
      Tape tape;
      const ParamStore watched = state.params.watched(tape);
      const Tensor pred = model.forward(watched, batch.degraded);
      const LossTerms loss = total_loss(pred, batch.clean, cfg.loss);
      row.loss = loss.total.item();
      if (!std::isfinite(row.loss)) {
        throw NumericError("training diverged: loss is " + std::to_string(row.loss) +
                           " at step " + std::to_string(step));
      }
      const Gradients g = tape.backward(loss.total);
      for (const auto& [name, t] : watched.entries()) grads.add(name, g.of(t).detach());
    }
    adam_step(state.params, grads, state.optim, row.lr);

    const std::int64_t done = step + 1;
    if (cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.steps)) {
      if (!held) held = heldout_set(cfg);
      row.psnr = evaluate_heldout(model, state.params, *held).first;
    }
    if (sink) sink(row);
  }
}

TrainSummary train_toy(const TrainConfig& cfg, TrainState& state) {
  state = initial_state(cfg);
  TrainSummary sum;
  train_steps(cfg, state, cfg.steps, [&](const LogRow& r) { sum.log.push_back(r); });
  if (!sum.log.empty()) {
    // Single batches are noisy, so both ends are averaged over a short window.
    const std::size_t k = std::min<std::size_t>(10, sum.log.size());
    for (std::size_t i = 0; i < k; ++i) {
      sum.initial_loss += sum.log[i].loss / static_cast<double>(k);
      sum.final_loss += sum.log[sum.log.size() - 1 - i].loss / static_cast<double>(k);
    }
  }
  const auto [restored, degraded] =
      evaluate_heldout(Model(cfg.model), state.params, heldout_set(cfg));
  sum.heldout_restored_psnr = restored;
  sum.heldout_degraded_psnr = degraded;
  return sum;
}

void save_state(const std::filesystem::path& path, const TrainConfig& cfg,
                const TrainState& state) {
  io::save_checkpoint(path, cfg.model, state.params);
  io::Bundle b;
  b.header = json{{"kind", "adam"},
                  {"step", state.optim.step},
                  {"beta1", state.optim.config.beta1},
                  {"beta2", state.optim.config.beta2},
                  {"eps", state.optim.config.eps},
                  {"train_config", train_json(cfg)}}
                 .dump();
  for (const auto& [name, t] : state.optim.m.entries()) b.tensors.add("m." + name, t);
  for (const auto& [name, t] : state.optim.v.entries()) b.tensors.add("v." + name, t);
  io::save_bundle(std::filesystem::path(path.string() + ".optim"), b);
}

TrainState load_state(const std::filesystem::path& path, TrainConfig* cfg) {
  io::Checkpoint ck = io::load_checkpoint(path);
  const io::Bundle b = io::load_bundle(std::filesystem::path(path.string() + ".optim"));
  TrainState s;
  s.params = std::move(ck.params);
  json h;
  try {
    h = json::parse(b.header);
    if (h.at("kind") != "adam") throw io::IoError("optimizer sidecar is not Adam state");
    s.optim.step = h.at("step").get<std::int64_t>();
    s.optim.config = {h.at("beta1").get<double>(), h.at("beta2").get<double>(),
                      h.at("eps").get<double>()};
  } catch (const json::exception& e) {
    throw io::IoError(std::string("malformed optimizer sidecar header: ") + e.what());
  }
  for (const auto& [name, t] : s.params.entries()) {
    const std::string mk = "m." + name, vk = "v." + name;
    if (!b.tensors.contains(mk) || !b.tensors.contains(vk)) {
      throw io::IoError("optimizer sidecar lacks moments for " + name);
    }
    s.optim.m.add(name, b.tensors.get(mk));
    s.optim.v.add(name, b.tensors.get(vk));
  }
  if (cfg != nullptr) {
    *cfg = train_config_from_json(h.at("train_config").dump());
    if (!(cfg->model == ck.config)) {
      throw io::IoError("checkpoint and optimizer sidecar disagree on the model config");
    }
  }
  return s;
}

}  // namespace dualformer::training
