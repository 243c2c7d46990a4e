// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.
//
// Command-line front end. Exit codes: 0 ok, 1 gradient-check failure,
// 2 usage or configuration error, 3 numeric abort.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dualformer/analysis.h"
#include "dualformer/grad_suites.h"
#include "dualformer/io.h"
#include "dualformer/metrics.h"
#include "dualformer/model.h"
#include "dualformer/parallel.h"
#include "dualformer/rng.h"
#include "dualformer/tensor.h"
#include "dualformer/training.h"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dualformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

// ---------------------------------------------------------------------------
// Small file helpers

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io::IoError("cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

bool is_tensor_file(const fs::path& p) { return p.extension() == ".dft"; }

// Images are either P6 files or raw DFT1 tensors of any batch size.
Tensor load_image(const fs::path& p) {
  return is_tensor_file(p) ? io::load_tensor(p) : io::read_ppm(p);
}

void save_image(const fs::path& p, const Tensor& t) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (is_tensor_file(p)) {
    io::save_tensor(p, t);
  } else {
    io::write_ppm(p, t);
  }
}

Tensor image_at(const Tensor& batch, std::int64_t i) {
  const Shape s = batch.shape();
  return dispatch(batch.dtype(), [&]<typename T>() {
    const auto v = batch.values<T>();
    const std::int64_t per = s.c * s.h * s.w;
    std::vector<T> out(v.begin() + i * per, v.begin() + (i + 1) * per);
    return Tensor::from_buffer<T>({1, s.c, s.h, s.w}, std::move(out));
  });
}

// Mean of per-image PSNR; infinite when any pair is identical.
double mean_psnr(const Tensor& pred, const Tensor& ref) {
  if (pred.shape() != ref.shape()) {
    throw ShapeError("psnr: " + pred.shape().str() + " vs " + ref.shape().str());
  }
  const Tensor r = ref.to(pred.dtype());
  double sum = 0.0;
  for (std::int64_t i = 0; i < pred.shape().n; ++i) {
    sum += metrics::psnr(image_at(pred, i), image_at(r, i));
  }
  return sum / static_cast<double>(pred.shape().n);
}

json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

std::string fmt(double v, int digits = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Model configuration shared by most commands

struct ModelSource {
  std::string preset;
  std::string config_path;
  std::vector<std::string> variants;

  void add_to(CLI::App* cmd, const std::string& default_preset) {
    preset = default_preset;
    cmd->add_option("--preset", preset, "Built-in configuration")
        ->check(CLI::IsMember({"full", "tiny"}))
        ->capture_default_str();
    cmd->add_option("--config", config_path,
                    "JSON file: a model config, or a training config with a \"model\" "
                    "section. Absent keys keep the preset's values");
    cmd->add_option("--variant", variants,
                    "Ablation switch key=value (attn, fusion, ffn, lfe_ca, htb_lfe); "
                    "comma-separate to combine, repeat for several");
  }

  ModelConfig base() const {
    ModelConfig c = preset == "full" ? ModelConfig::full() : ModelConfig::tiny();
    if (!config_path.empty()) c = model_from_file(config_path, c);
    c.validate();
    return c;
  }

  static ModelConfig model_from_file(const fs::path& path, const ModelConfig& base) {
    const std::string text = read_text(path);
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(path.string() + ": expected a JSON object");
    if (j.contains("model")) {
      training::TrainConfig t;
      t.model = base;
      return training::train_config_from_json(text, t).model;
    }
    return config_from_json(text, base);
  }
};

ModelConfig apply_switches(ModelConfig c, const std::string& expr) {
  std::stringstream ss(expr);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) c = variant(c, part);
  }
  c.validate();
  return c;
}

ModelConfig with_variants(const ModelConfig& base, const std::vector<std::string>& vs) {
  ModelConfig c = base;
  for (const auto& v : vs) c = apply_switches(c, v);
  return c;
}

// Parameters either from a checkpoint or freshly initialised.
struct WeightSource {
  std::string weights;
  std::string init = "random";
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd, const std::string& default_init) {
    init = default_init;
    cmd->add_option("--weights", weights, "Checkpoint (DFCK) to load");
    cmd->add_option("--init", init, "Initialisation when no checkpoint is given")
        ->check(CLI::IsMember({"zero", "random"}))
        ->capture_default_str();
  }

  // A checkpoint carries its own config; a conflicting --config is an error.
  std::pair<ModelConfig, ParamStore> resolve(const ModelConfig& requested,
                                             bool config_given) const {
    if (!weights.empty()) {
      io::Checkpoint ck = io::load_checkpoint(weights);
      if (config_given && !(ck.config == requested)) {
        throw ConfigError("checkpoint " + weights + " was saved with config " +
                          hash_hex(config_hash(ck.config)) + ", not " +
                          hash_hex(config_hash(requested)));
      }
      return {ck.config, std::move(ck.params)};
    }
    const InitMode mode = init == "zero" ? InitMode::kZero : InitMode::kFanIn;
    return {requested, Model(requested).init_params(Rng(seed).split("init"), DType::kF32, mode)};
  }
};

std::vector<std::int64_t> parse_int_list(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated list of positive integers, got \"" +
                        text + "\"");
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  ModelSource model;
  std::int64_t resolution = 256;
  std::string out;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const ModelConfig base = a.model.base();
  if (a.resolution % ModelConfig::kStride != 0) {
    throw ConfigError("--resolution must be a multiple of 16");
  }
  const analysis::CostReport report = analysis::cost_report(base, a.resolution, a.resolution);
  std::cout << report.to_text();
  json j = json::parse(report.to_json());
  if (!a.model.variants.empty()) {
    json rows = json::array();
    rows.push_back({{"variant", "baseline"},
                    {"config_hash", report.config_hash},
                    {"total_params", report.total_params},
                    {"total_macs", report.total_macs}});
    std::printf("\n%-36s %18s %12s %12s %10s\n", "variant", "config", "params(M)", "GMAC",
                "dParams(M)");
    std::printf("%-36s %18s %12.3f %12.3f %10s\n", "baseline", report.config_hash.c_str(),
                report.total_params / 1e6, report.total_macs / 1e9, "-");
    for (const auto& v : a.model.variants) {
      const ModelConfig c = apply_switches(base, v);
      const auto r = analysis::cost_report(c, a.resolution, a.resolution);
      rows.push_back({{"variant", v},
                      {"config_hash", r.config_hash},
                      {"total_params", r.total_params},
                      {"total_macs", r.total_macs}});
      std::printf("%-36s %18s %12.3f %12.3f %+10.3f\n", v.c_str(), r.config_hash.c_str(),
                  r.total_params / 1e6, r.total_macs / 1e9,
                  (r.total_params - report.total_params) / 1e6);
    }
    j["variants"] = rows;
  }
  if (!a.out.empty()) write_text(a.out, j.dump(2));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// forward

struct ForwardArgs {
  ModelSource model;
  WeightSource weights;
  std::string in, out, ref;
  bool no_pad = false;
};

int cmd_forward(const ForwardArgs& a, bool config_given) {
  const ModelConfig requested = with_variants(a.model.base(), a.model.variants);
  auto [config, params] = a.weights.resolve(requested, config_given);
  const Model model(config);

  const Tensor input = load_image(a.in);
  const Shape s = input.shape();
  if (s.c != 3) throw ShapeError("forward expects 3-channel images, got " + s.str());
  const bool aligned = s.h % ModelConfig::kStride == 0 && s.w % ModelConfig::kStride == 0;
  if (!aligned && a.no_pad) {
    throw ShapeError("image " + s.str() + " is not a multiple of 16 and padding is disabled");
  }
  const Tensor padded = aligned ? input : io::pad_reflect(input, ModelConfig::kStride);
  const DType dtype = params.entries().front().second.dtype();
  Tensor restored = model.forward(params, padded.to(dtype));
  if (!aligned) restored = io::crop(restored, s.h, s.w);
  if (!a.out.empty()) save_image(a.out, restored);

  std::cout << "config " << hash_hex(config_hash(config)) << "\n";
  std::cout << "input " << s.str() << (aligned ? "" : " (reflect-padded to multiple of 16)")
            << "\n";
  if (!a.ref.empty()) {
    const Tensor ref = load_image(a.ref);
    const double before = mean_psnr(input, ref);
    const double after = mean_psnr(restored, ref);
    std::cout << "psnr_input " << fmt(before) << " dB\n"
              << "psnr_restored " << fmt(after) << " dB\n"
              << "psnr_gain " << fmt(after - before) << " dB\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string scope = "all";
  std::uint64_t seed = 0;
  bool inject_fault = false;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::vector<GradUnit> units = grad_units(a.scope);
  if (a.inject_fault) units.push_back(corrupted_grad_unit());
  int failed = 0;
  json rows = json::array();
  const auto t0 = std::chrono::steady_clock::now();
  for (const GradUnit& u : units) {
    const GradCheckReport r = u.run(a.seed);
    failed += r.passed ? 0 : 1;
    std::printf("%s %-6s %-36s worst_rel %.3e  tol %.0e  coords %lld\n",
                r.passed ? "PASS" : "FAIL", u.scope.c_str(), u.name.c_str(), r.max_rel_error,
                u.tol, static_cast<long long>(r.coords_checked));
    std::fflush(stdout);
    rows.push_back({{"scope", u.scope},
                    {"name", u.name},
                    {"tol", u.tol},
                    {"max_rel_error", r.max_rel_error},
                    {"coords", r.coords_checked},
                    {"passed", r.passed}});
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu units, %d failed, %.1f s\n", units.size(), failed, secs);
  if (!a.out.empty()) {
    write_text(a.out, json{{"scope", a.scope}, {"seed", a.seed}, {"units", rows}}.dump(2));
  }
  return failed == 0 ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// erf

struct ErfArgs {
  ModelSource model;
  WeightSource weights;
  std::string stage;
  std::int64_t size = 32;
  int probes = 100;
  std::int64_t h = -1, w = -1;
  std::string out, summary;
};

int cmd_erf(const ErfArgs& a, bool config_given) {
  const ModelConfig requested = with_variants(a.model.base(), a.model.variants);
  auto [config, params] = a.weights.resolve(requested, config_given);
  const Model model(config);
  const auto tags = model.stage_tags();
  if (std::find(tags.begin(), tags.end(), a.stage) == tags.end()) {
    std::string known;
    for (const auto& t : tags) known += (known.empty() ? "" : ", ") + t;
    throw ConfigError("unknown stage \"" + a.stage + "\"; stages: " + known);
  }
  if (a.size % ModelConfig::kStride != 0) throw ConfigError("--size must be a multiple of 16");
  analysis::ErfOptions o;
  o.height = o.width = a.size;
  o.probes = a.probes;
  o.seed = a.weights.seed;
  o.h = a.h;
  o.w = a.w;
  const analysis::ErfMap m = analysis::erf(model, params, a.stage, o);
  json j = json::parse(m.summary_json());
  j["config_hash"] = hash_hex(config_hash(config));
  j["probes"] = a.probes;
  j["size"] = a.size;
  std::cout << j.dump() << "\n";
  if (!a.out.empty()) save_image(a.out, m.grad_magnitude);
  if (!a.summary.empty()) write_text(a.summary, j.dump(2));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  ModelSource model;
  std::string resolutions = "128,192,256";
  bool time = false;
  std::string out;
};

int cmd_sweep(const SweepArgs& a) {
  const ModelConfig config = with_variants(a.model.base(), a.model.variants);
  const auto res = parse_int_list(a.resolutions);
  for (auto r : res) {
    if (r % ModelConfig::kStride != 0) throw ConfigError("resolutions must be multiples of 16");
  }
  const Model model(config);
  std::optional<ParamStore> params;
  if (a.time) params = model.init_params(Rng(0).split("init"), DType::kF32);
  const analysis::SweepTable table = analysis::sweep(model, res, params ? &*params : nullptr);
  std::cout << table.to_text();
  json j = json::parse(table.to_json());
  bool monotone = true;
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    monotone = monotone && table.rows[i].macs > table.rows[i - 1].macs;
  }
  j["monotone"] = monotone;
  // Ratio between the largest and smallest resolution against the pixel ratio.
  const auto lo = std::min_element(table.rows.begin(), table.rows.end(),
                                   [](auto& x, auto& y) { return x.resolution < y.resolution; });
  const auto hi = std::max_element(table.rows.begin(), table.rows.end(),
                                   [](auto& x, auto& y) { return x.resolution < y.resolution; });
  const double ratio = static_cast<double>(hi->macs) / static_cast<double>(lo->macs);
  const double pixels = std::pow(static_cast<double>(hi->resolution) / lo->resolution, 2.0);
  j["ratio"] = {{"from", lo->resolution}, {"to", hi->resolution},
                {"macs_ratio", ratio}, {"pixel_ratio", pixels}};
  std::printf("MACs(%lld)/MACs(%lld) = %.4f (pixel ratio %.4f), monotone %s\n",
              static_cast<long long>(hi->resolution), static_cast<long long>(lo->resolution),
              ratio, pixels, monotone ? "yes" : "no");
  if (!a.out.empty()) write_text(a.out, j.dump(2));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  ModelSource model;
  training::TrainConfig cfg;
  std::string degrade_kind = "noise";
  std::string layers;
  std::string out, log, resume, dump_heldout;
  std::int64_t stop_at = -1;
  bool print_config = false;
  std::vector<CLI::Option*> config_flags;  // flags that change the run
};

// Flags explicitly given on the command line override the config file.
training::TrainConfig build_train_config(const TrainArgs& a, CLI::App* cmd) {
  training::TrainConfig base;
  base.model = a.model.preset == "full" ? ModelConfig::full() : ModelConfig::tiny();
  training::TrainConfig cfg =
      a.model.config_path.empty()
          ? base
          : training::train_config_from_json(read_text(a.model.config_path), base);
  cfg.model = with_variants(cfg.model, a.model.variants);
  const auto given = [&](const char* name) { return cmd->get_option(name)->count() > 0; };
  const training::TrainConfig& f = a.cfg;
#define DF_TAKE(flag, field) \
  if (given(flag)) cfg.field = f.field
  DF_TAKE("--steps", steps);
  DF_TAKE("--batch", batch);
  DF_TAKE("--size", size);
  DF_TAKE("--heldout", heldout);
  DF_TAKE("--eval-every", eval_every);
  DF_TAKE("--seed", seed);
  DF_TAKE("--lr0", schedule.lr0);
  DF_TAKE("--lr-min", schedule.lr_min);
  DF_TAKE("--cycles", schedule.cycles);
  DF_TAKE("--beta1", adam.beta1);
  DF_TAKE("--beta2", adam.beta2);
  DF_TAKE("--eps", adam.eps);
  DF_TAKE("--noise-sigma", degrade.noise_sigma);
  DF_TAKE("--rain-streaks", degrade.rain_streaks);
  DF_TAKE("--rain-angle", degrade.rain_angle_deg);
  DF_TAKE("--rain-length", degrade.rain_length);
  DF_TAKE("--rain-intensity", degrade.rain_intensity);
  DF_TAKE("--haze-t", degrade.haze_t);
  DF_TAKE("--haze-airlight", degrade.haze_airlight);
  DF_TAKE("--snow-density", degrade.snow_density);
  DF_TAKE("--snow-size", degrade.snow_size);
  DF_TAKE("--degrade-seed", degrade.seed);
  DF_TAKE("--lambda-psnr", loss.lambda_psnr);
  DF_TAKE("--lambda-perceptual", loss.lambda_perceptual);
#undef DF_TAKE
  if (given("--degrade")) cfg.degrade.kind = training::degrade_kind_from_string(a.degrade_kind);
  if (given("--perceptual-layers")) {
    cfg.loss.perceptual_layers.clear();
    for (auto v : parse_int_list(a.layers)) cfg.loss.perceptual_layers.push_back(static_cast<int>(v));
  }
  if (given("--extractor-seed")) {
    cfg.loss.extractor_seed = f.loss.extractor_seed;
    cfg.loss.extractor = std::make_shared<training::RandomPyramid>(cfg.loss.extractor_seed);
  }
  // Round-trip through the strict parser so every field is validated and the
  // model-side loss weights stay in step with the loss section.
  return training::train_config_from_json(training::to_json(cfg));
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

int cmd_train(const TrainArgs& a, CLI::App* cmd) {
  training::TrainConfig cfg;
  training::TrainState state;
  const bool resuming = !a.resume.empty();
  if (resuming) {
    for (const CLI::Option* o : a.config_flags) {
      if (o->count() > 0) {
        throw ConfigError(o->get_name() + " cannot be combined with --resume; the stored "
                          "configuration is used");
      }
    }
    state = training::load_state(a.resume, &cfg);
  } else {
    cfg = build_train_config(a, cmd);
    state = training::initial_state(cfg);
  }
  if (a.print_config) {
    std::cout << json::parse(training::to_json(cfg)).dump(2) << "\n";
    return kExitOk;
  }
  if (a.out.empty()) throw ConfigError("--out is required");
  const std::int64_t until = a.stop_at < 0 ? cfg.steps : std::min(a.stop_at, cfg.steps);
  if (until < state.optim.step) {
    throw ConfigError("--stop-at " + std::to_string(until) + " is before the checkpoint step " +
                      std::to_string(state.optim.step));
  }

  const json meta = {{"started_at", utc_now()},
                     {"config_hash", hash_hex(config_hash(cfg.model))},
                     {"train_config", json::parse(training::to_json(cfg))},
                     {"threads", thread_count()},
                     {"rng", std::string(Rng::kAlgorithm)},
                     {"seed", cfg.seed},
                     {"resumed_from_step", resuming ? json(state.optim.step) : json(nullptr)},
                     {"until", until}};
  std::cout << meta.dump() << "\n";
  write_text(a.out + ".meta.json", meta.dump(2));

  const Model model(cfg.model);
  const training::HeldOut held = training::heldout_set(cfg);
  if (!a.dump_heldout.empty()) {
    fs::create_directories(a.dump_heldout);
    io::save_tensor(fs::path(a.dump_heldout) / "clean.dft", held.clean);
    io::save_tensor(fs::path(a.dump_heldout) / "degraded.dft", held.degraded);
  }

  std::ofstream log;
  if (!a.log.empty()) {
    if (fs::path(a.log).has_parent_path()) fs::create_directories(fs::path(a.log).parent_path());
    log.open(a.log, resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw io::IoError("cannot write " + a.log);
  }
  std::vector<training::LogRow> rows;
  training::train_steps(cfg, state, until, [&](const training::LogRow& r) {
    rows.push_back(r);
    if (log) log << r.to_json() << "\n" << std::flush;
    if (r.psnr) {
      std::printf("step %lld  lr %.3e  loss %.5f  heldout_psnr %.4f\n",
                  static_cast<long long>(r.step), r.lr, r.loss, *r.psnr);
      std::fflush(stdout);
    }
  });
  training::save_state(a.out, cfg, state);

  const auto [restored, degraded] = training::evaluate_heldout(model, state.params, held);
  json summary = {{"step", state.optim.step},
                  {"heldout_degraded_psnr", number_or_inf(degraded)},
                  {"heldout_restored_psnr", number_or_inf(restored)},
                  {"heldout_gain_db", number_or_inf(restored - degraded)}};
  if (!rows.empty()) {
    const std::size_t k = std::min<std::size_t>(10, rows.size());
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      first += rows[i].loss;
      last += rows[rows.size() - 1 - i].loss;
    }
    summary["initial_loss"] = first / k;
    summary["final_loss"] = last / k;
  }
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred, ref, out;
  bool y = false;
};

std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".dft")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_eval(const EvalArgs& a) {
  const metrics::ChannelMode mode = a.y ? metrics::ChannelMode::kY : metrics::ChannelMode::kRgb;
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(a.pred)) {
    if (!fs::is_directory(a.ref)) throw io::IoError("--ref must be a directory too");
    for (const auto& p : image_files(a.pred)) {
      const fs::path r = fs::path(a.ref) / p.filename();
      if (!fs::exists(r)) throw io::IoError("no reference for " + p.filename().string());
      pairs.emplace_back(p, r);
    }
    if (pairs.empty()) throw io::IoError("no .ppm or .dft files in " + a.pred);
  } else {
    pairs.emplace_back(a.pred, a.ref);
  }
  json rows = json::array();
  double psnr_sum = 0.0, ssim_sum = 0.0;
  std::int64_t count = 0;
  for (const auto& [p, r] : pairs) {
    const Tensor pt = load_image(p);
    const Tensor rt = load_image(r).to(pt.dtype());
    if (pt.shape() != rt.shape()) {
      throw ShapeError(p.string() + " " + pt.shape().str() + " vs " + rt.shape().str());
    }
    for (std::int64_t i = 0; i < pt.shape().n; ++i) {
      const metrics::MetricResult m = metrics::evaluate(image_at(pt, i), image_at(rt, i), mode);
      std::string name = p.filename().string();
      if (pt.shape().n > 1) name += "[" + std::to_string(i) + "]";
      std::printf("%-32s psnr %10s  ssim %.6f\n", name.c_str(), fmt(m.psnr).c_str(), m.ssim);
      rows.push_back({{"name", name}, {"psnr", number_or_inf(m.psnr)}, {"ssim", m.ssim}});
      psnr_sum += m.psnr;
      ssim_sum += m.ssim;
      ++count;
    }
  }
  const double mp = psnr_sum / count, ms = ssim_sum / count;
  std::printf("mean (%lld images, %s)  psnr %s  ssim %.6f\n", static_cast<long long>(count),
              std::string(metrics::to_string(mode)).c_str(), fmt(mp).c_str(), ms);
  const json j = {{"mode", std::string(metrics::to_string(mode))},
                  {"images", rows},
                  {"mean_psnr", number_or_inf(mp)},
                  {"mean_ssim", ms}};
  if (!a.out.empty()) write_text(a.out, j.dump(2));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch transformer image restoration toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dualformer 0.1.0");

  std::function<int()> action;

  // analyze
  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze", "Parameter and MAC report");
  an.model.add_to(c_an, "full");
  c_an->add_option("--resolution", an.resolution, "Square input side")->capture_default_str();
  c_an->add_option("--out", an.out, "Report JSON path");
  c_an->callback([&] { action = [&] { return cmd_analyze(an); }; });

  // forward
  ForwardArgs fw;
  auto* c_fw = app.add_subcommand("forward", "Restore one image or a tensor batch");
  fw.model.add_to(c_fw, "tiny");
  fw.weights.add_to(c_fw, "zero");
  c_fw->add_option("--seed", fw.weights.seed, "Seed for --init random");
  c_fw->add_option("--in", fw.in, "Input .ppm or .dft")->required();
  c_fw->add_option("--out", fw.out, "Output .ppm or .dft");
  c_fw->add_option("--ref", fw.ref, "Clean reference for PSNR");
  c_fw->add_flag("--no-pad", fw.no_pad, "Reject sizes that are not multiples of 16");
  c_fw->callback([&] {
    const bool given = c_fw->get_option("--config")->count() > 0 ||
                       c_fw->get_option("--variant")->count() > 0;
    action = [&, given] { return cmd_forward(fw, given); };
  });

  // gradcheck
  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  c_gc->add_option("--scope", gc.scope)
      ->check(CLI::IsMember({"op", "block", "model", "all"}))
      ->capture_default_str();
  c_gc->add_option("--seed", gc.seed)->capture_default_str();
  c_gc->add_flag("--inject-fault", gc.inject_fault,
                 "Add a unit with a deliberately wrong backward (must fail)");
  c_gc->add_option("--out", gc.out, "JSON report path");
  c_gc->callback([&] { action = [&] { return cmd_gradcheck(gc); }; });

  // erf
  ErfArgs er;
  auto* c_er = app.add_subcommand("erf", "Effective receptive field of one stage");
  er.model.add_to(c_er, "tiny");
  er.weights.add_to(c_er, "random");
  c_er->add_option("--stage", er.stage, "Stage tag, e.g. enc2 or latent_after_htb1")->required();
  c_er->add_option("--size", er.size, "Square probe size")->capture_default_str();
  c_er->add_option("--probes", er.probes)->capture_default_str();
  c_er->add_option("--seed", er.weights.seed, "Seed for init and probes")->capture_default_str();
  c_er->add_option("--row", er.h, "Row in stage coordinates (default centre)");
  c_er->add_option("--col", er.w, "Column in stage coordinates (default centre)");
  c_er->add_option("--out", er.out, "Gradient map (.dft)");
  c_er->add_option("--summary", er.summary, "Summary JSON path");
  c_er->callback([&] {
    const bool given = c_er->get_option("--config")->count() > 0 ||
                       c_er->get_option("--variant")->count() > 0;
    action = [&, given] { return cmd_erf(er, given); };
  });

  // sweep
  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "MACs (and optionally time) across resolutions");
  sw.model.add_to(c_sw, "full");
  c_sw->add_option("--resolutions", sw.resolutions)->capture_default_str();
  c_sw->add_flag("--time", sw.time, "Also time one forward pass per resolution");
  c_sw->add_option("--out", sw.out, "JSON path");
  c_sw->callback([&] { action = [&] { return cmd_sweep(sw); }; });

  // train
  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Toy restoration training run");
  tr.model.add_to(c_tr, "tiny");
  {
    auto& f = tr.cfg;
    auto& flags = tr.config_flags;
    flags.push_back(c_tr->get_option("--preset"));
    flags.push_back(c_tr->get_option("--config"));
    flags.push_back(c_tr->get_option("--variant"));
    const auto add = [&](const char* name, auto& field, const char* help) {
      flags.push_back(c_tr->add_option(name, field, help)->capture_default_str());
    };
    add("--steps", f.steps, "Optimisation steps");
    add("--batch", f.batch, "Batch size");
    add("--size", f.size, "Crop side (multiple of 16)");
    add("--heldout", f.heldout, "Held-out images");
    add("--eval-every", f.eval_every, "Held-out evaluation period");
    add("--seed", f.seed, "Root seed");
    add("--lr0", f.schedule.lr0, "Initial learning rate");
    add("--lr-min", f.schedule.lr_min, "Floor of the cosine schedule");
    add("--cycles", f.schedule.cycles, "Cosine restarts");
    add("--beta1", f.adam.beta1, "Adam beta1");
    add("--beta2", f.adam.beta2, "Adam beta2");
    add("--eps", f.adam.eps, "Adam epsilon");
    add("--lambda-psnr", f.loss.lambda_psnr, "PSNR loss weight");
    add("--lambda-perceptual", f.loss.lambda_perceptual, "Perceptual loss weight");
    add("--extractor-seed", f.loss.extractor_seed, "Seed of the frozen feature pyramid");
    flags.push_back(c_tr->add_option("--perceptual-layers", tr.layers,
                                     "1-based pyramid stages, comma-separated (default 1,3)"));
    flags.push_back(c_tr->add_option("--degrade", tr.degrade_kind, "Synthetic degradation")
                        ->check(CLI::IsMember({"noise", "rain", "haze", "snow"}))
                        ->capture_default_str());
    add("--noise-sigma", f.degrade.noise_sigma, "Gaussian noise sigma");
    add("--rain-streaks", f.degrade.rain_streaks, "Streaks per image");
    add("--rain-angle", f.degrade.rain_angle_deg, "Streak angle from vertical (degrees)");
    add("--rain-length", f.degrade.rain_length, "Streak length in pixels");
    add("--rain-intensity", f.degrade.rain_intensity, "Streak brightness");
    add("--haze-t", f.degrade.haze_t, "Haze transmission");
    add("--haze-airlight", f.degrade.haze_airlight, "Haze airlight");
    add("--snow-density", f.degrade.snow_density, "Flakes per pixel");
    add("--snow-size", f.degrade.snow_size, "Maximum flake radius");
    add("--degrade-seed", f.degrade.seed, "Seed of the held-out degradation");
  }
  c_tr->add_option("--out", tr.out, "Checkpoint path (optimiser state goes to <out>.optim)");
  c_tr->add_option("--log", tr.log, "JSON-lines metrics log (appended on --resume)");
  c_tr->add_option("--resume", tr.resume, "Continue from a checkpoint written by train");
  c_tr->add_option("--stop-at", tr.stop_at, "Stop and checkpoint after this many steps");
  c_tr->add_option("--dump-heldout", tr.dump_heldout,
                   "Directory for the held-out clean.dft and degraded.dft");
  c_tr->add_flag("--print-config", tr.print_config, "Print the resolved config and exit");
  c_tr->callback([&] { action = [&] { return cmd_train(tr, c_tr); }; });

  // eval
  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "PSNR and SSIM between predictions and references");
  c_ev->add_option("--pred", ev.pred, "File or directory")->required();
  c_ev->add_option("--ref", ev.ref, "File or directory")->required();
  c_ev->add_flag("--y", ev.y, "Evaluate on the BT.601 luma channel");
  c_ev->add_option("--out", ev.out, "JSON path");
  c_ev->callback([&] { action = [&] { return cmd_eval(ev); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const io::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    // ConfigError and ShapeError both derive from invalid_argument.
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitFailure;
  }
}
