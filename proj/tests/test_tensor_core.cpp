// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <string>

#include "dualformer/grad_check.h"
#include "dualformer/nn_ops.h"
#include "dualformer/ops.h"
#include "dualformer/parallel.h"
#include "dualformer/rng.h"
#include "dualformer/tape.h"
#include "test_util.h"

namespace dualformer {
namespace {

using testing::make;
using testing::max_abs_diff;
using testing::random_tensor;

TEST(Add, ZeroIsIdentity) {
  const Tensor x = random_tensor({2, 3, 4, 5}, 1);
  EXPECT_TRUE(add(x, Tensor::zeros(x.shape(), DType::kF64)).identical(x));
}

TEST(Add, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({1, 2, 3, 3});
  const Tensor b = Tensor::zeros({1, 2, 4, 3});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(a.shape().str()), std::string::npos) << msg;
    EXPECT_NE(msg.find(b.shape().str()), std::string::npos) << msg;
  }
}

TEST(Mul, PerChannelAndScalarBroadcast) {
  const Tensor x = random_tensor({2, 3, 2, 2}, 2);
  const Tensor g = random_tensor({1, 3, 1, 1}, 3);
  const Tensor y = mul(x, g);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t h = 0; h < 2; ++h)
        for (std::int64_t w = 0; w < 2; ++w)
          EXPECT_DOUBLE_EQ(y.at(n, c, h, w), x.at(n, c, h, w) * g.at(0, c, 0, 0));
  const Tensor s = mul(x, Tensor::scalar(2.0, DType::kF64));
  EXPECT_TRUE(s.identical(scale(x, 2.0)));
}

TEST(Matmul, IdentityLeft) {
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  const Tensor i3 = make({1, 1, 3, 3}, eye);
  const Tensor m = random_tensor({1, 1, 3, 7}, 4);
  EXPECT_TRUE(matmul(i3, m).identical(m));
}

double triple_loop(const Tensor& a, const Tensor& b, std::int64_t n,
                   std::int64_t c, std::int64_t i, std::int64_t j, bool ta,
                   bool tb) {
  const std::int64_t k = ta ? a.shape().h : a.shape().w;
  double s = 0.0;
  for (std::int64_t r = 0; r < k; ++r) {
    const double av = ta ? a.at(n, c, r, i) : a.at(n, c, i, r);
    const double bv = tb ? b.at(n, c, j, r) : b.at(n, c, r, j);
    s += av * bv;
  }
  return s;
}

TEST(Matmul, MatchesTripleLoopOracle) {
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      const Tensor a = random_tensor(ta ? Shape{2, 3, 5, 4} : Shape{2, 3, 4, 5},
                                     10 + ta);
      const Tensor b = random_tensor(tb ? Shape{2, 3, 3, 5} : Shape{2, 3, 5, 3},
                                     20 + tb);
      const Tensor y = matmul(a, b, ta, tb);
      ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 3}));
      for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
          for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t j = 0; j < 3; ++j)
              EXPECT_NEAR(y.at(n, c, i, j), triple_loop(a, b, n, c, i, j, ta, tb),
                          1e-12);
    }
  }
}

TEST(Matmul, InnerDimMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({1, 1, 4, 5}), Tensor::zeros({1, 1, 4, 3})),
               ShapeError);
}

TEST(SplitConcat, RoundTripIsBitwiseForRandomPartitions) {
  Rng rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.below(12));
    std::vector<std::int64_t> parts;
    std::int64_t left = c;
    while (left > 0) {
      const std::int64_t p = 1 + static_cast<std::int64_t>(rng.below(left));
      parts.push_back(p);
      left -= p;
    }
    const Tensor x = random_tensor({2, c, 3, 2}, 100 + trial, -1, 1,
                                   trial % 2 ? DType::kF32 : DType::kF64);
    EXPECT_TRUE(concat_channels(split_channels(x, parts)).identical(x));
  }
}

TEST(SplitConcat, LatentWidthSplit) {
  const Tensor x = Tensor::zeros({2, 384, 4, 4});
  const auto halves = split_channels(x, {192, 192});
  ASSERT_EQ(halves.size(), 2u);
  EXPECT_EQ(halves[0].shape(), (Shape{2, 192, 4, 4}));
  EXPECT_EQ(halves[1].shape(), (Shape{2, 192, 4, 4}));
}

TEST(SplitConcat, UnitSlicesMatchIndexing) {
  std::vector<double> v(2 * 3 * 2 * 2);
  std::iota(v.begin(), v.end(), 0.0);
  const Tensor x = make({2, 3, 2, 2}, v);
  const auto parts = split_channels(x, {1, 1, 1});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < 4; ++i)
        EXPECT_EQ(parts[c].at(n, 0, i / 2, i % 2),
                  static_cast<double>(n * 12 + c * 4 + i));
}

TEST(SplitConcat, BadPartsThrow) {
  EXPECT_THROW(split_channels(Tensor::zeros({1, 4, 1, 1}), {2, 1}), ShapeError);
  EXPECT_THROW(concat_channels({Tensor::zeros({1, 1, 2, 2}),
                                Tensor::zeros({1, 1, 3, 2})}),
               ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  const Tensor x = tape.watch(random_tensor({2, 2, 3, 3}, 5));
  const Gradients g = tape.backward(sum(x));
  EXPECT_TRUE(g.of(x).identical(Tensor::full(x.shape(), 1.0, DType::kF64)));
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Tape tape;
  const Tensor x = tape.watch(random_tensor({1, 3, 2, 2}, 6));
  const Gradients g = tape.backward(sum(mul(x, x)));
  EXPECT_LT(max_abs_diff(g.of(x), scale(x.detach(), 2.0)), 1e-15);
}

TEST(Backward, UnreachedLeafGetsZeros) {
  Tape tape;
  const Tensor x = tape.watch(random_tensor({1, 2, 2, 2}, 7));
  const Tensor unused = tape.watch(random_tensor({1, 1, 3, 1}, 8));
  const Gradients g = tape.backward(sum(x));
  EXPECT_FALSE(g.reached(unused));
  EXPECT_TRUE(g.of(unused).identical(Tensor::zeros(unused.shape(), DType::kF64)));
}

TEST(Backward, RootNotOnTapeThrows) {
  Tape tape;
  Tape other;
  tape.watch(Tensor::zeros({1, 1, 1, 1}, DType::kF64));
  const Tensor y = other.watch(Tensor::zeros({1, 1, 1, 1}, DType::kF64));
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST(Backward, NonScalarRootThrows) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::zeros({1, 2, 1, 1}, DType::kF64));
  EXPECT_THROW(tape.backward(scale(x, 2.0)), std::invalid_argument);
}

Tensor composite(const std::vector<Tensor>& in) {
  const Tensor& a = in[0];
  const Tensor& b = in[1];
  Tensor m = matmul(a, b, false, true);         // (1,2,3,3)
  Tensor s = add(square(m), scale(m, 0.5));
  Tensor t = mul(s, Tensor::full({1, 2, 1, 1}, 0.7, DType::kF64));
  Tensor c = concat_channels({t, log(add_scalar(abs(m), 1.0))});
  return mean(sub(c, clamp_min(c, -0.2)));
}

TEST(Backward, CompositeGraphMatchesFiniteDifferences) {
  const Tensor a = random_tensor({1, 2, 3, 4}, 11);
  const Tensor b = random_tensor({1, 2, 3, 4}, 12);
  GradCheckOptions opts;
  opts.tol = 1e-6;
  const GradCheckReport r = grad_check(composite, {a, b}, opts);
  EXPECT_TRUE(r.passed) << r.summary();
}

TEST(Backward, IsLinearInTheRoot) {
  const Tensor x0 = random_tensor({1, 2, 3, 3}, 13);
  auto grad_of = [&](double alpha, double beta) {
    Tape tape;
    const Tensor x = tape.watch(x0);
    const Tensor f = sum(square(x));
    const Tensor g = mean(nn::sigmoid(scale(x, 3.0)));
    return tape.backward(add(scale(f, alpha), scale(g, beta))).of(x);
  };
  const Tensor combined = grad_of(2.5, -1.5);
  const Tensor manual = add(scale(grad_of(1.0, 0.0), 2.5),
                            scale(grad_of(0.0, 1.0), -1.5));
  EXPECT_LT(max_abs_diff(combined, manual), 1e-10);
}

TEST(GradCheck, IdentityHasZeroError) {
  const GradCheckReport r =
      grad_check([](const Tensor& x) { return x; }, random_tensor({1, 1, 3, 3}, 14),
                 1e-5, 1e-4);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, SoftmaxOfMatmulPasses) {
  const Tensor a = random_tensor({2, 1, 4, 3}, 15);
  const Tensor b = random_tensor({2, 1, 3, 5}, 16);
  const GradCheckReport r = grad_check(
      [](const std::vector<Tensor>& in) {
        return nn::softmax(matmul(in[0], in[1]), 3);
      },
      {a, b});
  EXPECT_TRUE(r.passed) << r.summary();
}

// Doubles its input but claims the derivative is 3.
Tensor wrong_double(const Tensor& x) {
  return maybe_record(scale(x.detach(), 2.0), {x},
                      [](const Tensor& g) {
                        return std::vector<Tensor>{scale(g, 3.0)};
                      },
                      "wrong_double");
}

TEST(GradCheck, DetectsWrongBackward) {
  const GradCheckReport r =
      grad_check(wrong_double, random_tensor({1, 1, 2, 2}, 17), 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, NonFiniteValueNamesTheOp) {
  try {
    grad_check([](const Tensor& x) { return log(x); },
               make({1, 1, 1, 2}, {-1.0, 1.0}), 1e-5, 1e-4);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, RejectsFloat32) {
  EXPECT_THROW(grad_check([](const Tensor& x) { return x; },
                          Tensor::zeros({1, 1, 1, 1}, DType::kF32), 1e-5, 1e-4),
               std::invalid_argument);
}

// Every tensor-core op, ten random instances each.
struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  double lo, hi;
  MultiTensorFn f;
};

std::vector<OpCase> op_cases() {
  const Shape s{2, 3, 2, 3};
  return {
      {"add", {s, s}, -1, 1, [](auto& v) { return add(v[0], v[1]); }},
      {"add_bcast", {s, {1, 3, 1, 1}}, -1, 1, [](auto& v) { return add(v[0], v[1]); }},
      {"sub", {s, s}, -1, 1, [](auto& v) { return sub(v[0], v[1]); }},
      {"mul", {s, s}, -1, 1, [](auto& v) { return mul(v[0], v[1]); }},
      {"mul_bcast_spatial", {s, {2, 1, 2, 3}}, -1, 1,
       [](auto& v) { return mul(v[0], v[1]); }},
      {"mul_scalar", {s, {1, 1, 1, 1}}, -1, 1, [](auto& v) { return mul(v[0], v[1]); }},
      {"scale", {s}, -1, 1, [](auto& v) { return scale(v[0], -1.7); }},
      {"add_scalar", {s}, -1, 1, [](auto& v) { return add_scalar(v[0], 0.3); }},
      {"square", {s}, -1, 1, [](auto& v) { return square(v[0]); }},
      {"abs", {s}, 0.1, 1, [](auto& v) { return abs(scale(v[0], -1.0)); }},
      {"log", {s}, 0.2, 2, [](auto& v) { return log(v[0]); }},
      {"clamp_min", {s}, 0.1, 1, [](auto& v) { return clamp_min(v[0], 0.05); }},
      {"matmul", {{2, 1, 3, 4}, {2, 1, 4, 2}}, -1, 1,
       [](auto& v) { return matmul(v[0], v[1]); }},
      {"matmul_tt", {{1, 2, 4, 3}, {1, 2, 2, 4}}, -1, 1,
       [](auto& v) { return matmul(v[0], v[1], true, true); }},
      {"reshape", {s}, -1, 1, [](auto& v) { return reshape(v[0], {1, 6, 3, 2}); }},
      {"split", {s}, -1, 1,
       [](auto& v) { return square(split_channels(v[0], {2, 1})[1]); }},
      {"concat", {s, {2, 1, 2, 3}}, -1, 1,
       [](auto& v) { return concat_channels({v[1], v[0]}); }},
      {"sum", {s}, -1, 1, [](auto& v) { return sum(v[0]); }},
      {"mean", {s}, -1, 1, [](auto& v) { return mean(v[0]); }},
      {"weighted_sum", {s}, -1, 1,
       [s](auto& v) { return weighted_sum(v[0], random_tensor(s, 77)); }},
  };
}

TEST(GradCheck, EveryTensorOpOnTenInstances) {
  for (const OpCase& oc : op_cases()) {
    for (int inst = 0; inst < 10; ++inst) {
      std::vector<Tensor> in;
      for (std::size_t k = 0; k < oc.shapes.size(); ++k) {
        in.push_back(random_tensor(oc.shapes[k], 1000 * inst + 17 * k + 1, oc.lo,
                                   oc.hi));
      }
      const GradCheckReport r = grad_check(oc.f, in);
      EXPECT_TRUE(r.passed) << oc.name << " instance " << inst << ": "
                            << r.summary();
    }
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, SplitIsIndependentOfParentPosition) {
  Rng a(7);
  const Rng child1 = a.split("layer.weight");
  a.next_u64();
  Rng child2 = a.split("layer.weight");
  Rng c1 = child1;
  EXPECT_EQ(c1.next_u64(), child2.next_u64());
  EXPECT_NE(Rng(7).split(1).next_u64(), Rng(7).split(2).next_u64());
}

TEST(Rng, UniformAndNormalMoments) {
  Rng r(3);
  double su = 0, sn = 0, sn2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.01);
  EXPECT_NEAR(sn / n, 0.0, 0.03);
  EXPECT_NEAR(sn2 / n, 1.0, 0.04);
}

TEST(Determinism, ForwardIsBitwiseAcrossThreadCounts) {
  const Tensor x = random_tensor({2, 4, 9, 7}, 21, -1, 1, DType::kF32);
  const Tensor w = random_tensor({6, 4, 3, 3}, 22, -1, 1, DType::kF32);
  auto spec = nn::ConvSpec::dense(4, 6, 3);
  spec.bias = false;
  const int saved = thread_count();
  set_thread_count(1);
  auto run = [&] {
    const Tensor y = nn::conv2d(x, spec, w, Tensor());
    return matmul(y, y, false, true);
  };
  const Tensor y1 = run();
  set_thread_count(4);
  const Tensor y4 = run();
  set_thread_count(saved);
  EXPECT_TRUE(y1.identical(y4));
}

TEST(Tensor, NonFiniteConstructionIsCaughtByValidation) {
  const Tensor bad = make({1, 1, 1, 2}, {1.0, NAN});
  EXPECT_FALSE(all_finite(bad));
  EXPECT_THROW(check_finite(bad, "probe"), NumericError);
}

TEST(Tensor, DtypeConversionRoundTrip) {
  const Tensor x = random_tensor({1, 2, 3, 4}, 23, -1, 1, DType::kF32);
  EXPECT_TRUE(x.to(DType::kF64).to(DType::kF32).identical(x));
}

}  // namespace
}  // namespace dualformer
