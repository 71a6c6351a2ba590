#pragma once

// Quantization-friendly replacements for the S5 block's nonlinearities:
// qGELU (x * ReLU4(x + 2) / 4), hard sigmoid, and layer normalization with
// integer-accumulated statistics.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qs5/error.hpp"
#include "qs5/quant.hpp"
#include "qs5/tensor.hpp"

namespace qs5 {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double sigmoid_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

// ReLU[n](x) = max(min(x + shift, n), 0)
struct QGeluSpec {
  double shift = 2.0;
  double ceiling = 4.0;

  int shift_bits() const {
    const auto c = static_cast<std::uint32_t>(ceiling);
    if (static_cast<double>(c) != ceiling || c < 2 || !std::has_single_bit(c))
      throw QuantError("qGELU ceiling must be a power of two >= 2");
    if (shift != ceiling / 2.0)
      throw QuantError("qGELU shift must be half the ceiling");
    return std::countr_zero(c);
  }
};

inline double qgelu_ref(double x, const QGeluSpec& spec = {}) {
  return x * std::clamp(x + spec.shift, 0.0, spec.ceiling) / spec.ceiling;
}

inline double qgelu_ref_grad(double x, const QGeluSpec& spec = {}) {
  const double inner = x + spec.shift;
  const double slope = (inner > 0.0 && inner < spec.ceiling) ? x / spec.ceiling : 0.0;
  return std::clamp(inner, 0.0, spec.ceiling) / spec.ceiling + slope;
}

inline std::vector<double> qgelu_ref(std::span<const double> x, const QGeluSpec& spec = {}) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = qgelu_ref(x[i], spec);
  return out;
}

// Integer-domain qGELU. With code v and scale s,
//   out = (v * clamp(v + round(shift*s), 0, round(ceiling*s))) >> log2(ceiling)
// is the qGELU value in units of 1/s^2; it is then requantized at the input
// bit width with a fresh dynamic scale.
inline QTensor qgelu(const QTensor& q, const QGeluSpec& spec = {}) {
  const int shift_bits = spec.shift_bits();
  const double s = q.scale;
  const double shift_code = std::round(spec.shift * s);
  const double ceil_code = std::round(spec.ceiling * s);
  if (!(ceil_code <= static_cast<double>(INT32_MAX)))
    throw OverflowError("qGELU bound does not fit in int32");
  const auto shift_i = static_cast<std::int32_t>(shift_code);
  const auto ceil_i = static_cast<std::int32_t>(ceil_code);
  const double ss = s * s;

  std::vector<double> real(q.values.size());
  for (std::size_t i = 0; i < q.values.size(); ++i) {
    const std::int32_t v = q.values[i];
    const std::int32_t c = std::clamp(checked_add(v, shift_i), std::int32_t{0}, ceil_i);
    const std::int32_t prod = checked_mul(v, c);
    real[i] = static_cast<double>(prod >> shift_bits) / ss;  // arithmetic shift floors
  }
  return quantize(real, q.bits, q.shape);
}

// qGELU applied to a real tensor quantized at `bits`.
inline std::vector<double> fake_qgelu(std::span<const double> x, int bits, const QGeluSpec& spec = {}) {
  return dequantize(qgelu(quantize(x, bits), spec));
}

// ReLU6(x + 3) / 6
inline double hard_sigmoid(double x) { return std::clamp(x + 3.0, 0.0, 6.0) / 6.0; }

inline double hard_sigmoid_grad(double x) { return (x > -3.0 && x < 3.0) ? 1.0 / 6.0 : 0.0; }

inline std::vector<double> hard_sigmoid(std::span<const double> x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = hard_sigmoid(x[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the feature axis of each row.

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  RMatrix normalized;           // (x - mu) * rstd
  std::vector<double> rstd;     // per row
  std::vector<double> gamma;    // gamma as used (fake-quantized when wbits set)
  RMatrix pre_output;           // gamma * normalized + beta, before output quantization
};

// Row statistics use int32 sums of the activation codes when `abits` is set:
//   mean_c = sum(c)/H, var_c = sum(c^2)/H - mean_c^2,
//   n = (c - mean_c) / sqrt(var_c + eps * s^2)
// which equals (x - mu) / sqrt(sigma^2 + eps) for x = c / s.
inline FqTensor layer_norm(const RMatrix& x, std::span<const double> gamma, std::span<const double> beta,
                           std::optional<int> wbits, std::optional<int> abits, LayerNormCache* cache = nullptr) {
  const std::size_t rows = x.rows;
  const std::size_t h = x.cols;
  if (gamma.size() != h || beta.size() != h)
    throw ShapeError("layer norm parameter size does not match feature dimension");

  const FqTensor g = fake_quant_tensor(gamma, wbits);
  const FqTensor b = fake_quant_tensor(beta, wbits);

  LayerNormCache local;
  LayerNormCache& c = cache ? *cache : local;
  c.normalized = RMatrix(rows, h);
  c.pre_output = RMatrix(rows, h);
  c.rstd.assign(rows, 0.0);
  c.gamma = g.value;

  const double inv_h = 1.0 / static_cast<double>(h);
  if (abits) {
    const QTensor q = quantize(x.data, *abits);
    const double s = q.scale;
    for (std::size_t r = 0; r < rows; ++r) {
      std::int32_t sum = 0;
      std::int32_t sum_sq = 0;
      for (std::size_t j = 0; j < h; ++j) {
        const std::int32_t v = q.values[r * h + j];
        sum = checked_add(sum, v);
        sum_sq = checked_mac(sum_sq, v, v);
      }
      const double mean_c = static_cast<double>(sum) * inv_h;
      const double var_c = std::max(static_cast<double>(sum_sq) * inv_h - mean_c * mean_c, 0.0);
      const double denom = std::sqrt(var_c + kLayerNormEps * s * s);
      c.rstd[r] = s / denom;
      for (std::size_t j = 0; j < h; ++j) {
        const double n = (static_cast<double>(q.values[r * h + j]) - mean_c) / denom;
        c.normalized(r, j) = n;
        c.pre_output(r, j) = n * g.value[j] + b.value[j];
      }
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (std::size_t j = 0; j < h; ++j)
        mean += x(r, j);
      mean *= inv_h;
      double var = 0.0;
      for (std::size_t j = 0; j < h; ++j)
        var += (x(r, j) - mean) * (x(r, j) - mean);
      var *= inv_h;
      const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
      c.rstd[r] = rstd;
      for (std::size_t j = 0; j < h; ++j) {
        const double n = (x(r, j) - mean) * rstd;
        c.normalized(r, j) = n;
        c.pre_output(r, j) = n * g.value[j] + b.value[j];
      }
    }
  }
  return fake_quant_tensor(c.pre_output.data, abits);
}

inline RMatrix quant_layer_norm(const RMatrix& x, std::span<const double> gamma, std::span<const double> beta,
                                int wbits, int abits) {
  if (wbits < 2 || abits < 2)
    throw QuantError("quantized layer norm needs at least 2 bits");
  RMatrix out(x.rows, x.cols);
  out.data = layer_norm(x, gamma, beta, wbits, abits).value;
  return out;
}

// Straight-through backward: quantizers contribute identity Jacobians.
inline RMatrix layer_norm_backward(const LayerNormCache& c, const RMatrix& gy, std::span<double> dgamma,
                                   std::span<double> dbeta) {
  const std::size_t rows = c.normalized.rows;
  const std::size_t h = c.normalized.cols;
  RMatrix dx(rows, h);
  std::vector<double> dn(h);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_dn = 0.0;
    double mean_dn_n = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      const double n = c.normalized(r, j);
      dgamma[j] += gy(r, j) * n;
      dbeta[j] += gy(r, j);
      dn[j] = gy(r, j) * c.gamma[j];
      mean_dn += dn[j];
      mean_dn_n += dn[j] * n;
    }
    mean_dn /= static_cast<double>(h);
    mean_dn_n /= static_cast<double>(h);
    for (std::size_t j = 0; j < h; ++j)
      dx(r, j) = c.rstd[r] * (dn[j] - mean_dn - c.normalized(r, j) * mean_dn_n);
  }
  return dx;
}

}  // namespace qs5
