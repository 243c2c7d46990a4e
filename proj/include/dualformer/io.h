// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#ifndef DUALFORMER_IO_H_
#define DUALFORMER_IO_H_

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "dualformer/model.h"
#include "dualformer/params.h"
#include "dualformer/tensor.h"

namespace dualformer::io {

/// Malformed or unreadable files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor files: "DFT1", u8 dtype (0 = f32, 1 = f64), u32 x 4 shape (N,C,H,W),
// then the raw values in NCHW order. Everything is little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Checkpoints: "DFCK", u32 length + JSON header text, u32 entry count, then
// per entry a u32 name length, the name bytes and a DFT1 tensor. The header
// is the canonical model config for model checkpoints; other bundles (such
// as optimizer state) put their own metadata there.
struct Bundle {
  std::string header;
  ParamStore tensors;
};
void save_bundle(const std::filesystem::path& path, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& path);

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamStore& params);
/// Also checks that every parameter the config needs is present with the
/// right shape.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Binary PPM (P6, maxval 255). Images are (1,3,H,W) with values in [0,1];
// writing clamps and rounds to the nearest 8-bit level.
Tensor read_ppm(const std::filesystem::path& path, DType dtype = DType::kF32);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Mirror-pads H and W at the bottom/right up to the next multiple of
/// `multiple` (edge pixel not repeated). Dimensions already divisible are
/// left alone.
Tensor pad_reflect(const Tensor& image, std::int64_t multiple);
/// Top-left (height x width) window.
Tensor crop(const Tensor& image, std::int64_t height, std::int64_t width);

}  // namespace dualformer::io

#endif  // DUALFORMER_IO_H_
