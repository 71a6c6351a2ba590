#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace qs5 {

using cd = std::complex<double>;

// Nearest single-precision value. Must stay out of line: GCC 11 at -O3
// SLP-vectorizes adjacent inlined double->float->double round trips into
// no-ops.
[[gnu::noinline]] inline double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Dense row-major matrix. Sequences are stored as (time x features).
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool operator==(const Matrix&) const = default;
};

using RMatrix = Matrix<double>;
using CMatrix = Matrix<cd>;

// Plain complex product; avoids the NaN-recovery slow path of std::complex operator*.
inline cd cmul(cd a, cd b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

inline std::span<double> as_reals(std::span<cd> v) {
  return {reinterpret_cast<double*>(v.data()), v.size() * 2};
}

inline std::span<const double> as_reals(std::span<const cd> v) {
  return {reinterpret_cast<const double*>(v.data()), v.size() * 2};
}

}  // namespace qs5
