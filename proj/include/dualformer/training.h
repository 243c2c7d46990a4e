// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_TRAINING_H_
#define DUALFORMER_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dualformer/model.h"
#include "dualformer/params.h"
#include "dualformer/rng.h"
#include "dualformer/tensor.h"

namespace dualformer::training {

// ---------------------------------------------------------------------------
// Losses

/// 10 log10(max(MSE, 1e-12)), i.e. minus the PSNR at peak 1. Differentiable.
Tensor psnr_loss(const Tensor& pred, const Tensor& target);

inline constexpr std::uint64_t kDefaultExtractorSeed = 0x9e7f;

/// A frozen feature model. features(x)[j] is the output of stage j + 1.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int stages() const = 0;
  virtual std::vector<Tensor> features(const Tensor& x) const = 0;
};

/// Conv3x3 + ReLU stages with fixed random weights drawn from a seed. Stage
/// j has widths[j] output channels; every stage after the first has stride 2.
class RandomPyramid final : public FeatureExtractor {
 public:
  explicit RandomPyramid(std::uint64_t seed = kDefaultExtractorSeed,
                         std::vector<std::int64_t> widths = {8, 16, 32, 64},
                         std::int64_t in_channels = 3);
  int stages() const override { return static_cast<int>(specs_.size()); }
  std::vector<Tensor> features(const Tensor& x) const override;

 private:
  std::vector<nn::ConvSpec> specs_;
  std::vector<Tensor> weights_, biases_;  // float64
};

struct LossConfig {
  double lambda_psnr = 1.0;
  double lambda_perceptual = 0.2;
  /// 1-based extractor stages compared by the perceptual term.
  std::vector<int> perceptual_layers{1, 3};
  /// Seed of the default extractor; recorded so configs can rebuild it.
  std::uint64_t extractor_seed = kDefaultExtractorSeed;
  std::shared_ptr<const FeatureExtractor> extractor =
      std::make_shared<RandomPyramid>(kDefaultExtractorSeed);

  void validate() const;
};

/// Sum over the configured stages of mean |phi_j(pred) - phi_j(target)|,
/// the mean running over C_j x H_j x W_j (and the batch).
Tensor perceptual_loss(const Tensor& pred, const Tensor& target,
                       const LossConfig& cfg);

struct LossTerms {
  Tensor total;  // lambda_psnr * psnr + lambda_perceptual * perceptual
  double psnr = 0.0;
  double perceptual = 0.0;
};
/// The perceptual term is skipped only when its weight is zero.
LossTerms total_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Optimisation

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Both betas in [0, 1) and eps > 0.
  void validate() const;
};

struct OptimState {
  AdamConfig config;
  std::int64_t step = 0;
  ParamStore m, v;

  static OptimState for_params(const ParamStore& params, AdamConfig config = {});
};

/// One bias-corrected Adam update in place. `grads` must hold one finite
/// tensor per parameter, with the same names and shapes.
void adam_step(ParamStore& params, const ParamStore& grads, OptimState& state,
               double lr);

struct ScheduleConfig {
  double lr0 = 2e-4;
  double lr_min = 1e-6;
  int cycles = 1;
};
/// Cosine decay from lr0 to lr_min, restarted `cycles` times over the run.
/// step == total_steps gives lr_min.
double lr_schedule(std::int64_t step, std::int64_t total_steps,
                   const ScheduleConfig& cfg = {});

// ---------------------------------------------------------------------------
// Synthetic data

enum class DegradeKind { kNoise, kRain, kHaze, kSnow };
std::string_view to_string(DegradeKind k);
DegradeKind degrade_kind_from_string(std::string_view s);

struct DegradeSpec {
  DegradeKind kind = DegradeKind::kNoise;
  double noise_sigma = 0.1;
  std::int64_t rain_streaks = 12;
  double rain_angle_deg = 15.0;  // from vertical
  std::int64_t rain_length = 8;
  double rain_intensity = 0.5;
  double haze_t = 0.6;
  double haze_airlight = 0.9;
  double snow_density = 0.01;  // flakes per pixel
  double snow_size = 1.5;      // maximum flake radius in pixels
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument for out-of-range parameters.
  void validate() const;
};

/// Deterministic in (clean, spec). Output is clamped to [0, 1].
Tensor degrade(const Tensor& clean, const DegradeSpec& spec);

/// Procedural clean images: gradients, checkerboards and smoothed noise.
Tensor make_clean_batch(Rng& rng, std::int64_t batch, std::int64_t height,
                        std::int64_t width, DType dtype = DType::kF32);

Tensor flip_horizontal(const Tensor& x);
/// Rotates the (H, W) plane by k quarter turns counter-clockwise.
Tensor rot90(const Tensor& x, int k);

// ---------------------------------------------------------------------------
// Toy training loop

struct TrainConfig {
  ModelConfig model = ModelConfig::tiny();
  LossConfig loss;
  AdamConfig adam;
  ScheduleConfig schedule{2e-3, 1e-6, 1};
  DegradeSpec degrade;
  std::int64_t steps = 200;
  std::int64_t batch = 4;
  std::int64_t size = 32;
  std::int64_t heldout = 8;
  std::int64_t eval_every = 50;
  std::uint64_t seed = 0;
};

/// Strict JSON with nested "model", "loss", "adam", "schedule" and "degrade"
/// objects. Loss weights are shared with model.loss_lambda and kept equal;
/// explicit "loss" weights take precedence over the model's.
std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(std::string_view text,
                                   const TrainConfig& base = {});

struct LogRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> psnr;  // held-out PSNR of restored images
  std::string to_json() const;
};

struct TrainState {
  ParamStore params;
  OptimState optim;
};

struct HeldOut {
  Tensor clean, degraded;
};

/// The fixed validation set for a config.
HeldOut heldout_set(const TrainConfig& cfg);
/// Mean PSNR of model outputs against clean images, and of the inputs.
std::pair<double, double> evaluate_heldout(const Model& model,
                                           const ParamStore& params,
                                           const HeldOut& set);

/// Initial parameters (f32) and fresh optimiser state.
TrainState initial_state(const TrainConfig& cfg);

/// Runs steps [state.optim.step, until) in place. Each row is passed to
/// `sink` as it is produced. A non-finite loss raises NumericError naming
/// the step.
void train_steps(const TrainConfig& cfg, TrainState& state, std::int64_t until,
                 const std::function<void(const LogRow&)>& sink = {});

struct TrainSummary {
  std::vector<LogRow> log;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double heldout_degraded_psnr = 0.0;
  double heldout_restored_psnr = 0.0;
};

/// Full run from initialisation, returning the final state in `state`.
TrainSummary train_toy(const TrainConfig& cfg, TrainState& state);

/// Checkpoint at `path` plus optimiser moments at `path` + ".optim".
void save_state(const std::filesystem::path& path, const TrainConfig& cfg,
                const TrainState& state);
/// Restores both files. When `cfg` is non-null it receives the training
/// configuration recorded alongside the moments.
TrainState load_state(const std::filesystem::path& path, TrainConfig* cfg = nullptr);

}  // namespace dualformer::training

#endif  // DUALFORMER_TRAINING_H_
