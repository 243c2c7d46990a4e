// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_ANALYSIS_H_
#define DUALFORMER_ANALYSIS_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dualformer/model.h"
#include "dualformer/nn_ops.h"
#include "dualformer/params.h"
#include "dualformer/tensor.h"

namespace dualformer::analysis {

// ---------------------------------------------------------------------------
// Cost model
//
// Counts come from closed-form formulas over the configuration, not from the
// parameter store, so that the two can be cross-checked. MACs cover
// convolutions (k*k*Cin*Cout*Hout*Wout/groups, or per input pixel for
// transposed convolutions) and the two attention products. Elementwise ops,
// softmax, normalisation and pooling are not counted.

struct CostRow {
  std::string path;  // parameter-name prefix of the module
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct CostReport {
  std::string config_hash;
  std::int64_t height = 0, width = 0;
  std::vector<CostRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  std::int64_t flops_2x() const { return 2 * total_macs; }

  std::string to_json() const;
  /// Aligned table mirroring the JSON, one module per line.
  std::string to_text() const;
};

/// Parameter count of one convolution, bias included.
std::int64_t conv_params(const nn::ConvSpec& spec);
/// MACs of one convolution applied to an input of spatial size h x w.
std::int64_t conv_macs(const nn::ConvSpec& spec, std::int64_t h, std::int64_t w);

/// Rows per block at resolution (height, width); both must be multiples of 16.
CostReport cost_report(const ModelConfig& config, std::int64_t height,
                       std::int64_t width);
CostReport mac_count(const Model& model, std::int64_t height, std::int64_t width);
/// Parameter rows (resolution-independent); MAC columns are for 256 x 256.
CostReport param_count(const Model& model);

// ---------------------------------------------------------------------------
// Effective receptive field

/// Inclusive pixel rectangle in input coordinates.
struct Window {
  std::int64_t row0 = 0, row1 = -1, col0 = 0, col1 = -1;
  bool contains(std::int64_t r, std::int64_t c) const {
    return r >= row0 && r <= row1 && c >= col0 && c <= col1;
  }
  std::int64_t area() const { return (row1 - row0 + 1) * (col1 - col0 + 1); }
};

struct AnalyticField {
  Window window;        // clamped to the image
  bool global = false;  // the unit depends on every input pixel
  std::int64_t side = 0;  // unclamped window side, 0 when global
};

/// Receptive field of the unit at (h, w) of stage `tag`, by propagating an
/// index interval backwards through every layer's footprint. Squeeze-
/// excitation, attention and other pooled paths make the field global.
AnalyticField analytic_field(const ModelConfig& config, std::string_view tag,
                             std::int64_t h, std::int64_t w,
                             std::int64_t height, std::int64_t width);

/// Spatial size of the feature map at `tag` for an input of height x width.
std::pair<std::int64_t, std::int64_t> stage_size(const ModelConfig& config,
                                                 std::string_view tag,
                                                 std::int64_t height,
                                                 std::int64_t width);

struct ErfOptions {
  std::int64_t height = 32, width = 32;
  int probes = 100;
  std::uint64_t seed = 0;
  /// Location in stage coordinates; negative picks the centre.
  std::int64_t h = -1, w = -1;
};

struct ErfMap {
  std::string stage;
  std::int64_t h = 0, w = 0;      // stage-coordinate location
  Tensor grad_magnitude;           // (1,1,H,W) float64, mean over probes
  AnalyticField analytic;
  std::int64_t support = 0;        // pixels with nonzero magnitude
  double support_fraction = 0.0;
  bool within_window = true;       // support is a subset of the window

  std::string summary_json() const;
};

/// Mean over `probes` uniform [0,1] inputs of sum_c |d y(c, h, w) / d x|,
/// summed over input channels.
ErfMap erf(const Model& model, const ParamStore& params, std::string_view stage,
           const ErfOptions& options = {});

// ---------------------------------------------------------------------------
// Resolution sweep

struct SweepRow {
  std::int64_t resolution = 0;
  std::int64_t macs = 0;
  double seconds = -1.0;  // negative when timing was not requested
};

struct SweepTable {
  std::string config_hash;
  std::vector<SweepRow> rows;
  std::string to_json() const;
  std::string to_text() const;
};

/// MAC totals at square resolutions; when `params` is non-null, also times
/// one forward pass per resolution.
SweepTable sweep(const Model& model, const std::vector<std::int64_t>& resolutions,
                 const ParamStore* params = nullptr);

}  // namespace dualformer::analysis

#endif  // DUALFORMER_ANALYSIS_H_
