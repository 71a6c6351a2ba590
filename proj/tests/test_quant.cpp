#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "qs5/quant.hpp"

using namespace qs5;

TEST(ComputeScale, ExamplesByHand) {
  const std::vector<double> x{-1.0, 0.5, 1.0};
  EXPECT_EQ(compute_scale(x, 8), 127.0);
  const std::vector<double> z{0.0, 0.0, 0.0};
  EXPECT_EQ(compute_scale(z, 8), 1.0);
  const std::vector<double> y{-4.0};
  EXPECT_EQ(compute_scale(y, 2), 0.25);
}

TEST(ComputeScale, RejectsNonFiniteAndBadBits) {
  const std::vector<double> x{1.0, NAN};
  EXPECT_THROW(compute_scale(x, 8), NonFiniteError);
  const std::vector<double> y{1.0};
  EXPECT_THROW(compute_scale(y, 0), QuantError);
  EXPECT_THROW(compute_scale(y, 17), QuantError);
}

TEST(Quantize, ExamplesByHand) {
  const std::vector<double> x{-1.0, 0.5, 1.0};
  const QTensor q = quantize(x, 8);
  EXPECT_EQ(q.values, (std::vector<std::int32_t>{-127, 64, 127}));
  EXPECT_EQ(q.scale, 127.0);

  const std::vector<double> z{0.0, 0.0};
  for (int bits : {1, 2, 8, 16})
    EXPECT_EQ(quantize(z, bits).values, (std::vector<std::int32_t>{0, 0}));

  const std::vector<double> y{1.0, -1.0};
  const QTensor q2 = quantize(y, 2);
  EXPECT_EQ(q2.values, (std::vector<std::int32_t>{1, -1}));
  EXPECT_EQ(q2.scale, 1.0);
}

TEST(Quantize, ShapeIsKept) {
  const std::vector<double> x(6, 1.0);
  EXPECT_EQ(quantize(x, 8, {2, 3}).shape, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(quantize(x, 8).shape, (std::vector<std::size_t>{6}));
}

TEST(Quantize, NeverProducesMostNegativeCode) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  for (int bits : {2, 3, 4, 8}) {
    std::vector<double> x(257);
    for (double& v : x)
      v = n(rng);
    for (std::int32_t v : quantize(x, bits).values) {
      EXPECT_LE(v, qmax(bits));
      EXPECT_GE(v, -qmax(bits));
    }
  }
}

TEST(Dequantize, Examples) {
  QTensor q;
  q.values = {127};
  q.scale = 127.0;
  EXPECT_EQ(dequantize(q), (std::vector<double>{1.0}));
  q.values = {64};
  EXPECT_DOUBLE_EQ(dequantize(q)[0], 64.0 / 127.0);
  const std::vector<double> x{0.3};
  EXPECT_LE(std::abs(fake_quant(x, 8)[0] - 0.3), 0.5 / compute_scale(x, 8));
}

TEST(Quantize, RoundTripWithinHalfStepForRandomTensors) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<int> len(1, 64);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> x(len(rng));
    const double mag = std::exp(3.0 * n(rng));
    for (double& v : x)
      v = mag * n(rng);
    for (int bits : {2, 4, 8}) {
      const QTensor q = quantize(x, bits);
      const std::vector<double> r = dequantize(q);
      double m = 0.0;
      for (double v : x)
        m = std::max(m, std::abs(v));
      for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LE(std::abs(r[i] - x[i]), 0.5 / q.scale * (1.0 + 1e-12));
        // The float-snapped scale can move the bound by a relative 2^-24.
        EXPECT_LE(std::abs(r[i] - x[i]), m / (2.0 * qmax(bits)) * (1.0 + 1e-6));
      }
    }
  }
}

TEST(Quantize, ZeroAndSignSymmetry) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(33);
    for (double& v : x)
      v = n(rng);
    x[7] = 0.0;
    std::vector<double> neg(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      neg[i] = -x[i];
    for (int bits : {2, 4, 8}) {
      const QTensor a = quantize(x, bits);
      const QTensor b = quantize(neg, bits);
      EXPECT_EQ(a.values[7], 0);
      EXPECT_EQ(a.scale, b.scale);
      for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_EQ(a.values[i], -b.values[i]);
    }
  }
}

TEST(Quantize, HalfwayRoundsAwayFromZero) {
  // scale 0.5 puts +-1 exactly on +-0.5 codes
  const std::vector<double> x{2.0, 1.0, -1.0};
  const QTensor q = quantize(x, 2);
  EXPECT_EQ(q.scale, 0.5);
  EXPECT_EQ(q.values, (std::vector<std::int32_t>{1, 1, -1}));
}

TEST(FakeQuant, ExampleAndIdempotence) {
  const std::vector<double> x{0.5, 1.0};
  EXPECT_EQ(fake_quant(x, 8)[0], 64.0 / 127.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(20);
    for (double& e : v)
      e = n(rng);
    for (int bits : {2, 4, 8}) {
      const std::vector<double> once = fake_quant(v, bits);
      EXPECT_EQ(fake_quant(once, bits), once);
    }
  }
}

TEST(FakeQuant, StraightThroughGradientIsIdentity) {
  const std::vector<double> upstream{1.0, 1.0};
  EXPECT_EQ(fake_quant_vjp(upstream), (std::vector<double>{1.0, 1.0}));
  const std::vector<double> g{0.25, -3.0, 7.5};
  EXPECT_EQ(fake_quant_vjp(g), g);
}

TEST(FakeQuant, GridValuesAreFixedPoints) {
  QTensor q;
  q.values = {-127, -5, 0, 33, 127};
  q.scale = 50.0;
  const std::vector<double> x = dequantize(q);
  EXPECT_EQ(fake_quant(x, 8), x);
}

TEST(QuantizeComplex, SharedScale) {
  const std::vector<cd> a{{1.0, 0.0}};
  QComplexTensor q = quantize_complex(a, 8);
  EXPECT_EQ(q.re.values, (std::vector<std::int32_t>{127}));
  EXPECT_EQ(q.im.values, (std::vector<std::int32_t>{0}));
  EXPECT_EQ(q.shared_scale, 127.0);

  const std::vector<cd> b{{0.5, 1.0}};
  q = quantize_complex(b, 8);
  EXPECT_EQ(q.re.values, (std::vector<std::int32_t>{64}));
  EXPECT_EQ(q.im.values, (std::vector<std::int32_t>{127}));
  EXPECT_EQ(q.shared_scale, 127.0);
  EXPECT_EQ(q.re.scale, q.im.scale);
  EXPECT_EQ(q.re.bits, q.im.bits);

  const std::vector<cd> z{{0.0, 0.0}};
  q = quantize_complex(z, 8);
  EXPECT_EQ(q.re.values[0], 0);
  EXPECT_EQ(q.im.values[0], 0);
  EXPECT_EQ(q.shared_scale, 1.0);
}

TEST(Qdot, Examples) {
  QTensor a, b;
  a.values = {127};
  a.shape = {1};
  a.scale = 127.0;
  b = a;
  QAccumulator r = qdot(a, b);
  EXPECT_EQ(r.acc, (std::vector<std::int32_t>{16129}));
  EXPECT_EQ(r.combined_scale, 16129.0);
  EXPECT_EQ(r.dequantize()[0], 1.0);

  a.values = {1, 2};
  a.shape = {2};
  a.scale = 1.0;
  b.values = {3, 4};
  b.shape = {2};
  b.scale = 1.0;
  EXPECT_EQ(qdot(a, b).acc[0], 11);
}

TEST(Qdot, MatchesFloatDotOfDequantizedOperands) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> code(-127, 127);
  std::uniform_real_distribution<double> sc(1.0, 300.0);
  for (int trial = 0; trial < 10; ++trial) {
    QTensor a, b;
    a.shape = b.shape = {64};
    a.values.resize(64);
    b.values.resize(64);
    for (auto& v : a.values)
      v = code(rng);
    for (auto& v : b.values)
      v = code(rng);
    a.scale = sc(rng);
    b.scale = sc(rng);
    const QAccumulator r = qdot(a, b);
    long long exact = 0;
    for (int i = 0; i < 64; ++i)
      exact += static_cast<long long>(a.values[i]) * b.values[i];
    EXPECT_EQ(r.acc[0], exact);
    double fdot = 0.0;
    const auto da = dequantize(a), db = dequantize(b);
    for (int i = 0; i < 64; ++i)
      fdot += da[i] * db[i];
    EXPECT_NEAR(r.dequantize()[0], fdot, 1e-12 * (1.0 + std::abs(fdot)) * 64);
  }
}

TEST(Qdot, MatrixShapesAndMismatch) {
  QTensor a, b;
  a.values = {1, 2, 3, 4, 5, 6};
  a.shape = {2, 3};
  b.values = {1, 0, 0, 1, 1, 1};
  b.shape = {3, 2};
  const QAccumulator r = qdot(a, b);
  EXPECT_EQ(r.shape, (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(r.acc, (std::vector<std::int32_t>{4, 5, 10, 11}));
  b.shape = {2, 3};
  EXPECT_THROW(qdot(a, b), ShapeError);
}

TEST(Qdot, OverflowIsAnError) {
  QTensor a, b;
  a.shape = b.shape = {3};
  a.values = b.values = {32767, 32767, 32767};
  EXPECT_THROW(qdot(a, b), OverflowError);
  EXPECT_THROW(checked_mac(INT32_MAX, 1, 1), OverflowError);
  EXPECT_THROW(checked_add(INT32_MIN, -1), OverflowError);
  EXPECT_THROW(checked_mul(65536, 65536), OverflowError);
  EXPECT_EQ(checked_mac(5, 6, 7), 47);
}

TEST(Quantize, OneBitLevelSetIsZero) {
  const std::vector<double> x{0.7, -2.0};
  const QTensor q = quantize(x, 1);
  EXPECT_EQ(qmax(1), 0);
  EXPECT_EQ(q.values, (std::vector<std::int32_t>{0, 0}));
  EXPECT_EQ(q.scale, 0.0);
  EXPECT_TRUE(std::isnan(dequantize(q)[0]));
}

TEST(FakeQuantTensor, CarriesCodesWhenActive) {
  const std::vector<double> x{-1.0, 0.5, 1.0};
  const FqTensor off = fake_quant_tensor(x, std::nullopt);
  EXPECT_FALSE(off.active);
  EXPECT_EQ(off.value, x);
  const FqTensor on = fake_quant_tensor(x, 8);
  EXPECT_TRUE(on.active);
  EXPECT_EQ(on.code, (std::vector<double>{-127.0, 64.0, 127.0}));
  EXPECT_EQ(on.value, fake_quant(x, 8));
}
