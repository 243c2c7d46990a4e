// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include "dualformer/io.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace dualformer::io {
namespace {

constexpr char kTensorMagic[4] = {'D', 'F', 'T', '1'};
constexpr char kBundleMagic[4] = {'D', 'F', 'C', 'K'};
constexpr std::uint32_t kMaxNameLength = 1u << 16;
constexpr std::uint32_t kMaxHeaderLength = 1u << 24;

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void expect_magic(std::istream& is, const char (&magic)[4]) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw IoError("bad magic, expected \"" + std::string(magic, 4) + "\"");
  }
}

std::string get_string(std::istream& is, std::uint32_t limit, const char* what) {
  const auto len = get_le<std::uint32_t>(is, what);
  if (len > limit) throw IoError(std::string(what) + " length is implausible");
  std::string s(len, '\0');
  if (len > 0 && !is.read(s.data(), len)) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  return s;
}

void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

void finish(std::ostream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw IoError("write to " + path.string() + " failed");
}

// Header tokens of a PPM, skipping whitespace and '#' comments.
std::int64_t ppm_token(std::istream& is) {
  int ch = is.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = is.get();
    } else if (std::isspace(ch)) {
      ch = is.get();
    } else {
      break;
    }
  }
  if (ch == EOF || !std::isdigit(ch)) throw IoError("malformed PPM header");
  std::int64_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    if (v > (1 << 24)) throw IoError("PPM header value too large");
    ch = is.get();
  }
  // Exactly one whitespace byte separates the header from the raster.
  if (ch == EOF || !std::isspace(ch)) throw IoError("malformed PPM header");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("write_tensor: undefined tensor");
  os.write(kTensorMagic, 4);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype()));
  for (std::int64_t d : {t.shape().n, t.shape().c, t.shape().h, t.shape().w}) {
    if (d < 0 || d > std::numeric_limits<std::uint32_t>::max()) {
      throw std::invalid_argument("write_tensor: extent does not fit u32");
    }
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  dispatch(t.dtype(), [&]<typename T>() {
    for (T v : t.values<T>()) put_le<T>(os, v);
  });
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic);
  const auto tag = get_le<std::uint8_t>(is, "dtype");
  if (tag > 1) throw IoError("unknown dtype tag " + std::to_string(tag));
  Shape s;
  s.n = get_le<std::uint32_t>(is, "shape");
  s.c = get_le<std::uint32_t>(is, "shape");
  s.h = get_le<std::uint32_t>(is, "shape");
  s.w = get_le<std::uint32_t>(is, "shape");
  if (s.numel() > (std::int64_t{1} << 32)) throw IoError("tensor too large");
  const DType dt = static_cast<DType>(tag);
  return dispatch(dt, [&]<typename T>() {
    std::vector<T> v(static_cast<std::size_t>(s.numel()));
    for (T& x : v) x = get_le<T>(is, "tensor values");
    return Tensor::from_buffer<T>(s, std::move(v));
  });
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto os = open_out(path);
  write_tensor(os, t);
  finish(os, path);
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_tensor(is);
}

void save_bundle(const std::filesystem::path& path, const Bundle& bundle) {
  auto os = open_out(path);
  os.write(kBundleMagic, 4);
  put_string(os, bundle.header);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.tensors.size()));
  for (const auto& [name, t] : bundle.tensors.entries()) {
    put_string(os, name);
    write_tensor(os, t);
  }
  finish(os, path);
}

Bundle load_bundle(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic(is, kBundleMagic);
  Bundle b;
  b.header = get_string(is, kMaxHeaderLength, "header");
  const auto count = get_le<std::uint32_t>(is, "entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is, kMaxNameLength, "entry name");
    if (b.tensors.contains(name)) throw IoError("duplicate entry " + name);
    b.tensors.add(std::move(name), read_tensor(is));
  }
  if (is.peek() != EOF) throw IoError("trailing bytes after last entry");
  return b;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamStore& params) {
  save_bundle(path, Bundle{to_canonical_json(config), params});
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Bundle b = load_bundle(path);
  Checkpoint ck{config_from_json(b.header), std::move(b.tensors)};
  // Compare against a freshly laid-out store so that stale or truncated
  // checkpoints are caught here rather than deep inside forward().
  const ParamStore layout =
      Model(ck.config).init_params(Rng(0), DType::kF32, InitMode::kZero);
  if (layout.size() != ck.params.size()) {
    throw IoError("checkpoint has " + std::to_string(ck.params.size()) +
                  " tensors, config needs " + std::to_string(layout.size()));
  }
  for (const auto& [name, t] : layout.entries()) {
    if (!ck.params.contains(name)) throw IoError("checkpoint lacks " + name);
    if (ck.params.get(name).shape() != t.shape()) {
      throw IoError("checkpoint tensor " + name + " has shape " +
                    ck.params.get(name).shape().str() + ", expected " +
                    t.shape().str());
    }
  }
  return ck;
}

Tensor read_ppm(const std::filesystem::path& path, DType dtype) {
  auto is = open_in(path);
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || magic[1] != '6') {
    throw IoError(path.string() + ": not a binary PPM (P6)");
  }
  const std::int64_t w = ppm_token(is);
  const std::int64_t h = ppm_token(is);
  const std::int64_t maxval = ppm_token(is);
  if (w <= 0 || h <= 0) throw IoError(path.string() + ": empty image");
  if (maxval != 255) {
    throw IoError(path.string() + ": maxval must be 255, got " + std::to_string(maxval));
  }
  std::vector<unsigned char> raster(static_cast<std::size_t>(w * h * 3));
  if (!is.read(reinterpret_cast<char*>(raster.data()),
               static_cast<std::streamsize>(raster.size()))) {
    throw IoError(path.string() + ": truncated raster");
  }
  std::vector<double> v(raster.size());
  const std::int64_t plane = w * h;
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) v[c * plane + i] = raster[i * 3 + c] / 255.0;
  return Tensor::from_values({1, 3, h, w}, v, dtype);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw ShapeError("write_ppm: expected (1,3,H,W), got " + s.str());
  }
  const auto v = image.to_vector();
  const std::int64_t plane = s.plane();
  std::vector<unsigned char> raster(static_cast<std::size_t>(plane * 3));
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      double x = v[c * plane + i];
      if (std::isnan(x)) x = 0.0;
      raster[i * 3 + c] =
          static_cast<unsigned char>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
    }
  auto os = open_out(path);
  os << "P6\n" << s.w << ' ' << s.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(raster.data()),
           static_cast<std::streamsize>(raster.size()));
  finish(os, path);
}

namespace {

// Reflection without repeating the edge: -1 -> 1, n -> n - 2.
std::int64_t reflect(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename Index>
Tensor remap(const Tensor& x, Shape out, Index index) {
  const Shape s = x.shape();
  return dispatch(x.dtype(), [&]<typename T>() {
    const auto in = x.values<T>();
    std::vector<T> v(static_cast<std::size_t>(out.numel()));
    for (std::int64_t p = 0; p < s.n * s.c; ++p)
      for (std::int64_t y = 0; y < out.h; ++y)
        for (std::int64_t xx = 0; xx < out.w; ++xx) {
          const auto [sy, sx] = index(y, xx);
          v[(p * out.h + y) * out.w + xx] = in[(p * s.h + sy) * s.w + sx];
        }
    return Tensor::from_buffer<T>(out, std::move(v));
  });
}

}  // namespace

Tensor pad_reflect(const Tensor& image, std::int64_t multiple) {
  if (multiple < 1) throw std::invalid_argument("pad_reflect: multiple must be >= 1");
  const Shape s = image.shape();
  const auto up = [&](std::int64_t n) { return (n + multiple - 1) / multiple * multiple; };
  const Shape out{s.n, s.c, up(s.h), up(s.w)};
  if (out == s) return image;
  if (out.h - s.h >= s.h || out.w - s.w >= s.w) {
    throw ShapeError("pad_reflect: image " + s.str() + " is too small to mirror-pad to " +
                     out.str());
  }
  return remap(image, out, [&](std::int64_t y, std::int64_t x) {
    return std::pair{reflect(y, s.h), reflect(x, s.w)};
  });
}

Tensor crop(const Tensor& image, std::int64_t height, std::int64_t width) {
  const Shape s = image.shape();
  if (height < 1 || width < 1 || height > s.h || width > s.w) {
    throw ShapeError("crop: window " + std::to_string(height) + "x" + std::to_string(width) +
                     " does not fit " + s.str());
  }
  return remap(image, {s.n, s.c, height, width},
               [](std::int64_t y, std::int64_t x) { return std::pair{y, x}; });
}

}  // namespace dualformer::io
