// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dualformer/io.h"
#include "test_util.h"

namespace dualformer::io {
namespace {

namespace fs = std::filesystem;
using testing::random_tensor;

fs::path scratch(const std::string& leaf) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "dualformer_tests" /
                       (std::string(info->test_suite_name()) + "." + info->name());
  fs::create_directories(dir);
  return dir / leaf;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

TEST(TensorFile, RoundTripIsBitwise) {
  for (DType dt : {DType::kF32, DType::kF64}) {
    const Tensor t = random_tensor({2, 3, 5, 4}, 7, -3, 3, dt);
    std::stringstream ss;
    write_tensor(ss, t);
    EXPECT_TRUE(read_tensor(ss).identical(t));
  }
  const Tensor t = random_tensor({1, 1, 3, 3}, 8);
  save_tensor(scratch("t.dft"), t);
  EXPECT_TRUE(load_tensor(scratch("t.dft")).identical(t));
}

TEST(TensorFile, ByteLayout) {
  std::stringstream ss;
  write_tensor(ss, Tensor::from_values({1, 1, 1, 2}, std::vector<double>{1.0, -2.0}, DType::kF32));
  const std::string b = ss.str();
  ASSERT_EQ(b.size(), 4u + 1 + 16 + 8);
  EXPECT_EQ(b.substr(0, 4), "DFT1");
  EXPECT_EQ(b[4], '\0');
  const unsigned char shape[16] = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0};
  EXPECT_EQ(std::memcmp(b.data() + 5, shape, 16), 0);
  // IEEE-754 binary32, little-endian: 1.0f = 0x3f800000, -2.0f = 0xc0000000.
  const unsigned char values[8] = {0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0};
  EXPECT_EQ(std::memcmp(b.data() + 21, values, 8), 0);
}

TEST(TensorFile, MalformedInputsAreRejected) {
  std::stringstream bad_magic("DFT2\0");
  EXPECT_THROW(read_tensor(bad_magic), IoError);
  std::stringstream full;
  write_tensor(full, random_tensor({1, 2, 2, 2}, 1));
  const std::string bytes = full.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensor(truncated), IoError);
  std::string bad_dtype = bytes;
  bad_dtype[4] = 7;
  std::stringstream bd(bad_dtype);
  EXPECT_THROW(read_tensor(bd), IoError);
  EXPECT_THROW(load_tensor(scratch("missing.dft")), IoError);
}

TEST(Checkpoint, SaveLoadForwardIsBitwise) {
  const ModelConfig cfg = variant(ModelConfig::tiny(), "fusion=sk");
  const auto [model, params] = build(cfg, Rng(5));
  const Tensor x = random_tensor({1, 3, 32, 32}, 3, 0, 1, DType::kF32);
  const Tensor before = model.forward(params, x);
  save_checkpoint(scratch("m.dfck"), cfg, params);
  const Checkpoint ck = load_checkpoint(scratch("m.dfck"));
  EXPECT_EQ(ck.config, cfg);
  EXPECT_TRUE(ck.params.identical(params));
  EXPECT_TRUE(Model(ck.config).forward(ck.params, x).identical(before));
}

TEST(Checkpoint, LayoutMismatchIsRejected) {
  const ModelConfig cfg = ModelConfig::tiny();
  const auto [model, params] = build(cfg, Rng(5));
  ParamStore missing;
  for (std::size_t i = 0; i + 1 < params.size(); ++i) {
    missing.add(params.entries()[i].first, params.entries()[i].second);
  }
  save_checkpoint(scratch("short.dfck"), cfg, missing);
  EXPECT_THROW(load_checkpoint(scratch("short.dfck")), IoError);
  // Parameters for one config under the header of another.
  save_checkpoint(scratch("other.dfck"), variant(cfg, "ffn=mlp"), params);
  EXPECT_THROW(load_checkpoint(scratch("other.dfck")), IoError);
  write_bytes(scratch("junk.dfck"), "DFCKjunk");
  EXPECT_THROW(load_checkpoint(scratch("junk.dfck")), IoError);
}

TEST(Bundle, HeaderAndOrderSurvive) {
  Bundle b;
  b.header = R"({"kind":"demo"})";
  b.tensors.add("z", random_tensor({1, 1, 2, 2}, 1));
  b.tensors.add("a", random_tensor({1, 2, 1, 1}, 2, -1, 1, DType::kF32));
  save_bundle(scratch("b.dfck"), b);
  const Bundle back = load_bundle(scratch("b.dfck"));
  EXPECT_EQ(back.header, b.header);
  EXPECT_EQ(back.tensors.entries()[0].first, "z");
  EXPECT_TRUE(back.tensors.identical(b.tensors));
}

TEST(Ppm, EightBitRoundTripIsLossless) {
  std::vector<double> v(3 * 5 * 7);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i * 37) % 256) / 255.0;
  const Tensor img = Tensor::from_values({1, 3, 5, 7}, v, DType::kF64);
  write_ppm(scratch("a.ppm"), img);
  const Tensor back = read_ppm(scratch("a.ppm"), DType::kF64);
  EXPECT_TRUE(back.identical(img));
  write_ppm(scratch("b.ppm"), back);
  std::ifstream a(scratch("a.ppm"), std::ios::binary), b(scratch("b.ppm"), std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}),
            std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Ppm, QuantisationRoundsAndClamps) {
  const Tensor img = Tensor::from_values(
      {1, 3, 1, 2}, std::vector<double>{0.5, -1.0, 0.2, 2.0, 0.4999 / 255.0, 0.5001 / 255.0},
      DType::kF64);
  write_ppm(scratch("q.ppm"), img);
  const Tensor back = read_ppm(scratch("q.ppm"), DType::kF64);
  EXPECT_EQ(back.at(0, 0, 0, 0), 128.0 / 255.0);
  EXPECT_EQ(back.at(0, 0, 0, 1), 0.0);
  EXPECT_EQ(back.at(0, 1, 0, 0), 51.0 / 255.0);
  EXPECT_EQ(back.at(0, 1, 0, 1), 1.0);
  EXPECT_EQ(back.at(0, 2, 0, 0), 0.0);
  EXPECT_EQ(back.at(0, 2, 0, 1), 1.0 / 255.0);
}

TEST(Ppm, HeaderCommentsAreSkipped) {
  write_bytes(scratch("c.ppm"), std::string("P6\n# made by hand\n2 1\n# max\n255\n") +
                                    std::string("\x00\x10\x20\x30\x40\x50", 6));
  const Tensor t = read_ppm(scratch("c.ppm"), DType::kF64);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(t.at(0, 1, 0, 1), 0x40 / 255.0);
}

TEST(Ppm, MalformedFilesAreRejected) {
  write_bytes(scratch("p3.ppm"), "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_ppm(scratch("p3.ppm")), IoError);
  write_bytes(scratch("short.ppm"), "P6\n4 4\n255\nabc");
  EXPECT_THROW(read_ppm(scratch("short.ppm")), IoError);
  write_bytes(scratch("deep.ppm"), "P6\n1 1\n65535\n\0\0\0\0\0\0");
  EXPECT_THROW(read_ppm(scratch("deep.ppm")), IoError);
  write_bytes(scratch("text.ppm"), "P6\nwide 1\n255\n");
  EXPECT_THROW(read_ppm(scratch("text.ppm")), IoError);
  EXPECT_THROW(read_ppm(scratch("absent.ppm")), IoError);
  EXPECT_THROW(write_ppm(scratch("gray.ppm"), Tensor::zeros({1, 1, 4, 4})), ShapeError);
}

TEST(Padding, ReflectThenCropRestoresImage) {
  const Tensor x = random_tensor({1, 3, 20, 13}, 30);
  const Tensor p = pad_reflect(x, 16);
  EXPECT_EQ(p.shape(), (Shape{1, 3, 32, 16}));
  EXPECT_TRUE(crop(p, 20, 13).identical(x));
  // Mirror about the last row/column, edge not repeated.
  EXPECT_EQ(p.at(0, 1, 20, 0), x.at(0, 1, 18, 0));
  EXPECT_EQ(p.at(0, 2, 0, 13), x.at(0, 2, 0, 11));
  EXPECT_EQ(p.at(0, 0, 31, 15), x.at(0, 0, 7, 9));
  EXPECT_TRUE(pad_reflect(p, 16).identical(p));
  EXPECT_THROW(pad_reflect(random_tensor({1, 3, 5, 16}, 1), 16), ShapeError);
  EXPECT_THROW(crop(x, 21, 2), ShapeError);
}

}  // namespace
}  // namespace dualformer::io
