#pragma once

// Dynamic symmetric per-tensor quantization.
//
// A tensor x quantized at n bits is stored as integer codes
//   v = round(s * x),  s = (2^(n-1) - 1) / max|x|
// with round-half-away-from-zero and codes clamped to the symmetric range
// [-(2^(n-1) - 1), 2^(n-1) - 1]. The value -2^(n-1) is never produced.
//
// Scales are held at single precision. This makes fake quantization
// idempotent bit-for-bit (re-deriving the scale of an already quantized
// tensor lands on the same float) and lets model files store scales as f32
// without loss.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qs5/error.hpp"
#include "qs5/tensor.hpp"

namespace qs5 {

enum class QuantMode { weight, activation };

struct QuantSpec {
  int bits = 8;
  QuantMode mode = QuantMode::weight;
};

inline constexpr int kMinBits = 1;
inline constexpr int kMaxBits = 16;

inline void check_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits)
    throw QuantError("bit width " + std::to_string(bits) + " outside 1..16");
}

// Largest code magnitude, 2^(bits-1) - 1.
inline std::int32_t qmax(int bits) {
  check_bits(bits);
  return (std::int32_t{1} << (bits - 1)) - 1;
}

struct QTensor {
  std::vector<std::int32_t> values;
  std::vector<std::size_t> shape;
  double scale = 1.0;
  int bits = 8;

  double step() const { return 1.0 / scale; }
  std::size_t size() const { return values.size(); }
  bool operator==(const QTensor&) const = default;
};

// Real and imaginary parts share one per-tensor scale.
struct QComplexTensor {
  QTensor re;
  QTensor im;
  double shared_scale = 1.0;
  bool operator==(const QComplexTensor&) const = default;
};

inline double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) {
    if (!std::isfinite(v))
      throw NonFiniteError("non-finite value in quantizer input");
    m = std::max(m, std::abs(v));
  }
  return m;
}

// s = (2^(bits-1) - 1) / max|x|, rounded to single precision.
// An all-zero tensor gets scale 1. At 1 bit the level set is {0} and the
// formula gives s = 0; dequantizing such a tensor is undefined (NaN).
inline double scale_from_max(double m, int bits) {
  const double levels = static_cast<double>(qmax(bits));
  if (m == 0.0)
    return 1.0;
  const float s = static_cast<float>(levels / m);
  if (!std::isfinite(s))
    throw QuantError("quantization scale overflows single precision");
  return static_cast<double>(s);
}

inline double compute_scale(std::span<const double> x, int bits) {
  check_bits(bits);
  return scale_from_max(max_abs(x), bits);
}

inline std::int32_t quantize_value(double x, double scale, std::int32_t limit) {
  const double r = std::round(scale * x);  // half away from zero
  return static_cast<std::int32_t>(std::clamp(r, -static_cast<double>(limit), static_cast<double>(limit)));
}

inline QTensor quantize_with_scale(std::span<const double> x, double scale, int bits,
                                   std::vector<std::size_t> shape = {}) {
  const std::int32_t limit = qmax(bits);
  QTensor q;
  q.bits = bits;
  q.scale = scale;
  q.shape = shape.empty() ? std::vector<std::size_t>{x.size()} : std::move(shape);
  q.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    q.values[i] = quantize_value(x[i], scale, limit);
  return q;
}

inline QTensor quantize(std::span<const double> x, int bits, std::vector<std::size_t> shape = {}) {
  const double s = compute_scale(x, bits);
  return quantize_with_scale(x, s, bits, std::move(shape));
}

inline std::vector<double> dequantize(const QTensor& q) {
  std::vector<double> out(q.values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<double>(q.values[i]) / q.scale;
  return out;
}

inline std::vector<double> fake_quant(std::span<const double> x, int bits) {
  return dequantize(quantize(x, bits));
}

// Straight-through estimator: d round(x)/dx = 1, so the vector-Jacobian
// product of fake_quant is the upstream gradient itself.
inline std::vector<double> fake_quant_vjp(std::span<const double> upstream) {
  return {upstream.begin(), upstream.end()};
}

inline QComplexTensor quantize_complex(std::span<const cd> x, int bits) {
  check_bits(bits);
  const double m = max_abs(as_reals(x));
  const double s = scale_from_max(m, bits);
  const std::int32_t limit = qmax(bits);
  QComplexTensor q;
  q.shared_scale = s;
  for (QTensor* part : {&q.re, &q.im}) {
    part->bits = bits;
    part->scale = s;
    part->shape = {x.size()};
    part->values.resize(x.size());
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    q.re.values[i] = quantize_value(x[i].real(), s, limit);
    q.im.values[i] = quantize_value(x[i].imag(), s, limit);
  }
  return q;
}

inline std::vector<cd> dequantize(const QComplexTensor& q) {
  std::vector<cd> out(q.re.values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {static_cast<double>(q.re.values[i]) / q.shared_scale,
              static_cast<double>(q.im.values[i]) / q.shared_scale};
  return out;
}

// ---------------------------------------------------------------------------
// Integer accumulation

inline std::int32_t checked_mac(std::int32_t acc, std::int32_t a, std::int32_t b) {
  std::int32_t prod = 0;
  std::int32_t sum = 0;
  if (__builtin_mul_overflow(a, b, &prod) || __builtin_add_overflow(acc, prod, &sum))
    throw OverflowError("int32 accumulator overflow");
  return sum;
}

inline std::int32_t checked_add(std::int32_t a, std::int32_t b) {
  std::int32_t sum = 0;
  if (__builtin_add_overflow(a, b, &sum))
    throw OverflowError("int32 accumulator overflow");
  return sum;
}

inline std::int32_t checked_mul(std::int32_t a, std::int32_t b) {
  std::int32_t prod = 0;
  if (__builtin_mul_overflow(a, b, &prod))
    throw OverflowError("int32 product overflow");
  return prod;
}

struct QAccumulator {
  std::vector<std::int32_t> acc;
  std::vector<std::size_t> shape;
  double combined_scale = 1.0;

  std::vector<double> dequantize() const {
    std::vector<double> out(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i)
      out[i] = static_cast<double>(acc[i]) / combined_scale;
    return out;
  }
};

// Contracts the last axis of `a` with the first axis of `b`. One-dimensional
// operands act as a row (a) or a column (b) vector.
inline QAccumulator qdot(const QTensor& a, const QTensor& b) {
  if (a.shape.empty() || b.shape.empty() || a.shape.size() > 2 || b.shape.size() > 2)
    throw ShapeError("qdot expects 1-D or 2-D operands");
  const std::size_t k = a.shape.back();
  if (b.shape.front() != k)
    throw ShapeError("qdot inner dimensions do not conform");
  const std::size_t m = a.shape.size() == 2 ? a.shape[0] : 1;
  const std::size_t n = b.shape.size() == 2 ? b.shape[1] : 1;

  QAccumulator out;
  out.combined_scale = a.scale * b.scale;
  if (a.shape.size() == 2)
    out.shape.push_back(m);
  if (b.shape.size() == 2)
    out.shape.push_back(n);
  if (out.shape.empty())
    out.shape.push_back(1);
  out.acc.assign(m * n, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      std::int32_t acc = 0;
      for (std::size_t t = 0; t < k; ++t)
        acc = checked_mac(acc, a.values[i * k + t], b.values[t * n + j]);
      out.acc[i * n + j] = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Fake-quantized tensors as seen by the training engine. When quantization is
// active, `code` carries the integer payload as exact doubles so that dot
// products can be accumulated on codes and rescaled once, matching an int32
// kernel bit for bit.

struct FqTensor {
  std::vector<double> value;
  std::vector<double> code;
  double scale = 1.0;
  bool active = false;
};

struct FqComplex {
  std::vector<cd> value;
  std::vector<double> code_re;
  std::vector<double> code_im;
  double scale = 1.0;
  bool active = false;
};

inline FqTensor fq_from_qtensor(const QTensor& q) {
  FqTensor t;
  t.active = true;
  t.scale = q.scale;
  t.code.assign(q.values.begin(), q.values.end());
  t.value = dequantize(q);
  return t;
}

inline FqTensor fake_quant_tensor(std::span<const double> x, std::optional<int> bits) {
  if (!bits) {
    FqTensor t;
    t.value.assign(x.begin(), x.end());
    return t;
  }
  return fq_from_qtensor(quantize(x, *bits));
}

inline FqComplex fake_quant_complex(std::span<const cd> x, std::optional<int> bits) {
  FqComplex t;
  if (!bits) {
    t.value.assign(x.begin(), x.end());
    return t;
  }
  const QComplexTensor q = quantize_complex(x, *bits);
  t.active = true;
  t.scale = q.shared_scale;
  t.code_re.assign(q.re.values.begin(), q.re.values.end());
  t.code_im.assign(q.im.values.begin(), q.im.values.end());
  t.value = dequantize(q);
  return t;
}

}  // namespace qs5
