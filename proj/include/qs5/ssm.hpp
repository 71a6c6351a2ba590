#pragma once

// S5 recurrence core: complex diagonal state matrix, zero-order-hold
// discretization, sequential and parallel scans, and backpropagation through
// time.
//
//   x_k = Abar * x_{k-1} + Bbar u_k
//   y_k = Re(C x_k) + D * u_k
//
// The conjugate-pair factor 2 of the real readout is folded into C.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "qs5/error.hpp"
#include "qs5/quant.hpp"
#include "qs5/tensor.hpp"

namespace qs5 {

struct S5Params {
  std::vector<cd> lambda;          // P, continuous-time diagonal
  CMatrix B;                       // P x H
  CMatrix C;                       // H x P
  std::vector<double> D;           // H, diagonal feedthrough
  std::vector<double> log_delta;   // P

  std::size_t state_size() const { return lambda.size(); }
  std::size_t model_size() const { return D.size(); }
  bool operator==(const S5Params&) const = default;
};

struct DiscreteS5 {
  std::vector<cd> abar;   // P
  CMatrix bbar;           // P x H
  CMatrix C;              // H x P
  std::vector<double> D;  // H
};

inline std::size_t s5_parameter_count(std::size_t p, std::size_t h) {
  return 2 * p + 2 * p * h + 2 * h * p + h + p;
}

inline S5Params zeros_like(const S5Params& p) {
  S5Params z;
  z.lambda.assign(p.lambda.size(), cd{});
  z.B = CMatrix(p.B.rows, p.B.cols);
  z.C = CMatrix(p.C.rows, p.C.cols);
  z.D.assign(p.D.size(), 0.0);
  z.log_delta.assign(p.log_delta.size(), 0.0);
  return z;
}

// Abar = exp(Lambda * Delta), Bbar = (Abar - 1) / Lambda * B.
inline DiscreteS5 discretize_zoh(const S5Params& p) {
  const std::size_t ps = p.state_size();
  const std::size_t h = p.B.cols;
  if (p.B.rows != ps || p.C.rows != p.D.size() || p.C.cols != ps || p.log_delta.size() != ps || h != p.D.size())
    throw ShapeError("inconsistent S5 parameter shapes");
  DiscreteS5 d;
  d.abar.resize(ps);
  d.bbar = CMatrix(ps, h);
  d.C = p.C;
  d.D = p.D;
  for (std::size_t i = 0; i < ps; ++i) {
    const cd lam = p.lambda[i];
    if (lam == cd{})
      throw Error("singular discretization: Lambda[" + std::to_string(i) + "] = 0");
    const double delta = std::exp(p.log_delta[i]);
    d.abar[i] = std::exp(lam * delta);
    const cd f = (d.abar[i] - 1.0) / lam;
    for (std::size_t j = 0; j < h; ++j)
      d.bbar(i, j) = cmul(f, p.B(i, j));
  }
  return d;
}

// Chains gradients of Abar and Bbar back to Lambda, B and log_delta.
// Complex gradients use G = dL/dRe + i dL/dIm throughout.
inline void discretize_zoh_backward(const S5Params& p, const DiscreteS5& d, std::span<const cd> g_abar,
                                    const CMatrix& g_bbar, S5Params& grads) {
  const std::size_t ps = p.state_size();
  const std::size_t h = p.B.cols;
  for (std::size_t i = 0; i < ps; ++i) {
    const cd lam = p.lambda[i];
    const double delta = std::exp(p.log_delta[i]);
    const cd f = (d.abar[i] - 1.0) / lam;
    cd g_f{};
    for (std::size_t j = 0; j < h; ++j) {
      g_f += cmul(g_bbar(i, j), std::conj(p.B(i, j)));
      grads.B(i, j) += cmul(g_bbar(i, j), std::conj(f));
    }
    const cd g_abar_total = g_abar[i] + cmul(g_f, std::conj(1.0 / lam));
    const cd g_lam_direct = cmul(g_f, std::conj(-(d.abar[i] - 1.0) / (lam * lam)));
    const cd g_w = cmul(g_abar_total, std::conj(d.abar[i]));
    grads.lambda[i] += g_lam_direct + g_w * delta;
    const double g_delta = cmul(g_w, std::conj(lam)).real();
    grads.log_delta[i] += g_delta * delta;
  }
}

// Stable diagonal initialization: Lambda_k = -0.5 + i*pi*k/P, dense Gaussian
// B and C with variances 1/sqrt(H) and 1/sqrt(P), D ~ N(0,1) and
// log_delta ~ U[log 0.001, log 0.1]. Values are rounded to single precision.
inline S5Params init_s5(std::size_t p, std::size_t h, std::uint64_t seed) {
  if (p == 0 || h == 0)
    throw ShapeError("S5 dimensions must be positive");
  std::mt19937_64 rng(seed);
  S5Params s;
  s.lambda.resize(p);
  for (std::size_t k = 0; k < p; ++k)
    s.lambda[k] = {-0.5, round_to_f32(std::numbers::pi * static_cast<double>(k) / static_cast<double>(p))};

  const double b_std = std::sqrt(1.0 / std::sqrt(static_cast<double>(h)) / 2.0);
  const double c_std = std::sqrt(1.0 / std::sqrt(static_cast<double>(p)) / 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  s.B = CMatrix(p, h);
  for (auto& v : s.B.data)
    v = {round_to_f32(b_std * normal(rng)), round_to_f32(b_std * normal(rng))};
  s.C = CMatrix(h, p);
  for (auto& v : s.C.data)
    v = {round_to_f32(c_std * normal(rng)), round_to_f32(c_std * normal(rng))};
  s.D.resize(h);
  for (auto& v : s.D)
    v = round_to_f32(normal(rng));
  std::uniform_real_distribution<double> log_dt(std::log(0.001), std::log(0.1));
  s.log_delta.resize(p);
  for (auto& v : s.log_delta)
    v = round_to_f32(log_dt(rng));
  return s;
}

// ---------------------------------------------------------------------------
// Scans

enum class Readout { current_state, previous_state };

struct ScanQuant {
  std::optional<int> abar_bits;
  std::optional<int> weight_bits;  // Bbar, C, D
  std::optional<int> act_bits;     // input, hidden state, output

  bool active() const { return abar_bits || weight_bits || act_bits; }
};

// Weights as the scan consumes them, fake-quantized once per forward pass.
struct PreparedS5 {
  FqComplex abar;
  FqComplex bbar;  // P x H, row-major
  FqComplex C;     // H x P, row-major
  FqTensor D;
  std::size_t p = 0;
  std::size_t h = 0;
  ScanQuant quant;
  Readout readout = Readout::current_state;
};

inline PreparedS5 prepare_scan(const DiscreteS5& d, const ScanQuant& q = {}, Readout readout = Readout::current_state) {
  PreparedS5 w;
  w.p = d.abar.size();
  w.h = d.D.size();
  if (d.bbar.rows != w.p || d.bbar.cols != w.h || d.C.rows != w.h || d.C.cols != w.p)
    throw ShapeError("inconsistent discrete S5 shapes");
  w.abar = fake_quant_complex(d.abar, q.abar_bits);
  w.bbar = fake_quant_complex(d.bbar.data, q.weight_bits);
  w.C = fake_quant_complex(d.C.data, q.weight_bits);
  w.D = fake_quant_tensor(d.D, q.weight_bits);
  w.quant = q;
  w.readout = readout;
  return w;
}

struct ScanResult {
  RMatrix y;
  std::vector<cd> x_final;
};

// Values needed by the backward pass: the input and every state as the
// forward pass saw them.
struct ScanTape {
  RMatrix u;                     // L x H (fake-quantized)
  std::vector<std::vector<cd>> states;  // L + 1 states, states[0] = x0
};

inline ScanResult run_scan(const PreparedS5& w, const RMatrix& u, std::span<const cd> x0, ScanTape* tape = nullptr) {
  const std::size_t p = w.p;
  const std::size_t h = w.h;
  const std::size_t len = u.rows;
  if (u.cols != h)
    throw ShapeError("scan input width does not match the S5 model size");
  if (x0.size() != p)
    throw ShapeError("initial state size does not match the S5 state size");

  const FqTensor uq = fake_quant_tensor(u.data, w.quant.act_bits);
  FqComplex x = fake_quant_complex(x0, w.quant.act_bits);
  if (tape) {
    tape->u = RMatrix(len, h);
    tape->u.data = uq.value;
    tape->states.assign(1, x.value);
    tape->states.reserve(len + 1);
  }

  RMatrix ypre(len, h);
  std::vector<cd> xpre(p);
  const bool bu_int = w.bbar.active && uq.active;
  const bool du_int = w.D.active && uq.active;
  const double bu_scale = w.bbar.scale * uq.scale;
  const double du_scale = w.D.scale * uq.scale;

  for (std::size_t k = 0; k < len; ++k) {
    const bool ax_int = w.abar.active && x.active;
    const double ax_scale = w.abar.scale * x.scale;
    for (std::size_t i = 0; i < p; ++i) {
      cd bu;
      if (bu_int) {
        double re = 0.0, im = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
          re += w.bbar.code_re[i * h + j] * uq.code[k * h + j];
          im += w.bbar.code_im[i * h + j] * uq.code[k * h + j];
        }
        bu = {re / bu_scale, im / bu_scale};
      } else {
        double re = 0.0, im = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
          re += w.bbar.value[i * h + j].real() * uq.value[k * h + j];
          im += w.bbar.value[i * h + j].imag() * uq.value[k * h + j];
        }
        bu = {re, im};
      }
      cd ax;
      if (ax_int) {
        const double ar = w.abar.code_re[i], ai = w.abar.code_im[i];
        const double xr = x.code_re[i], xi = x.code_im[i];
        ax = {(ar * xr - ai * xi) / ax_scale, (ar * xi + ai * xr) / ax_scale};
      } else {
        ax = cmul(w.abar.value[i], x.value[i]);
      }
      xpre[i] = {ax.real() + bu.real(), ax.imag() + bu.imag()};
    }

    FqComplex next = fake_quant_complex(xpre, w.quant.act_bits);
    const FqComplex& r = (w.readout == Readout::current_state) ? next : x;
    const bool cx_int = w.C.active && r.active;
    const double cx_scale = w.C.scale * r.scale;
    for (std::size_t j = 0; j < h; ++j) {
      double cx = 0.0;
      if (cx_int) {
        for (std::size_t i = 0; i < p; ++i)
          cx += w.C.code_re[j * p + i] * r.code_re[i] - w.C.code_im[j * p + i] * r.code_im[i];
        cx /= cx_scale;
      } else {
        for (std::size_t i = 0; i < p; ++i)
          cx += w.C.value[j * p + i].real() * r.value[i].real() - w.C.value[j * p + i].imag() * r.value[i].imag();
      }
      const double du = du_int ? (w.D.code[j] * uq.code[k * h + j]) / du_scale : w.D.value[j] * uq.value[k * h + j];
      ypre(k, j) = cx + du;
    }
    x = std::move(next);
    if (tape)
      tape->states.push_back(x.value);
  }

  ScanResult out;
  out.y = RMatrix(len, h);
  out.y.data = fake_quant_tensor(ypre.data, w.quant.act_bits).value;
  out.x_final = x.value;
  return out;
}

inline ScanResult s5_scan_sequential(const DiscreteS5& d, const RMatrix& u, std::span<const cd> x0,
                                     const ScanQuant& q = {}, Readout readout = Readout::current_state) {
  return run_scan(prepare_scan(d, q, readout), u, x0);
}

// Chunked parallel scan of the first-order recurrence. Each worker scans its
// time chunk from a zero state while accumulating Abar^len; chunk carries are
// combined in chunk order, then each chunk adds Abar^(t-start+1) * carry.
// Per-step requantization is not associative, so quantized scans are refused.
inline ScanResult s5_scan_parallel(const DiscreteS5& d, const RMatrix& u, std::span<const cd> x0,
                                   const ScanQuant& q = {}, Readout readout = Readout::current_state,
                                   unsigned workers = 0) {
  if (q.active())
    throw UnsupportedError("parallel scan is only defined for unquantized S5 layers");
  const std::size_t p = d.abar.size();
  const std::size_t h = d.D.size();
  const std::size_t len = u.rows;
  if (u.cols != h || x0.size() != p || d.bbar.rows != p || d.bbar.cols != h || d.C.rows != h || d.C.cols != p)
    throw ShapeError("parallel scan shapes do not conform");

  if (workers == 0)
    workers = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(workers, len));
  const std::size_t chunk_len = len == 0 ? 0 : (len + chunks - 1) / chunks;

  // states[t] holds x_{t+1}
  CMatrix states(len, p);
  std::vector<std::vector<cd>> chunk_power(chunks, std::vector<cd>(p, cd{1.0, 0.0}));

  auto local_scan = [&](std::size_t c) {
    const std::size_t begin = c * chunk_len;
    const std::size_t end = std::min(len, begin + chunk_len);
    std::vector<cd> acc(p, cd{});
    for (std::size_t t = begin; t < end; ++t) {
      for (std::size_t i = 0; i < p; ++i) {
        double re = 0.0, im = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
          re += d.bbar(i, j).real() * u(t, j);
          im += d.bbar(i, j).imag() * u(t, j);
        }
        const cd ax = cmul(d.abar[i], acc[i]);
        acc[i] = {ax.real() + re, ax.imag() + im};
        chunk_power[c][i] = cmul(d.abar[i], chunk_power[c][i]);
        states(t, i) = acc[i];
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t c = 1; c < chunks; ++c)
      pool.emplace_back(local_scan, c);
    local_scan(0);
  }

  std::vector<std::vector<cd>> carry(chunks, std::vector<cd>(x0.begin(), x0.end()));
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t last = std::min(len, c * chunk_len) - 1;
    for (std::size_t i = 0; i < p; ++i)
      carry[c][i] = cmul(chunk_power[c - 1][i], carry[c - 1][i]) + states(last, i);
  }

  auto fixup = [&](std::size_t c) {
    const std::size_t begin = c * chunk_len;
    const std::size_t end = std::min(len, begin + chunk_len);
    std::vector<cd> power(p, cd{1.0, 0.0});
    for (std::size_t t = begin; t < end; ++t)
      for (std::size_t i = 0; i < p; ++i) {
        power[i] = cmul(d.abar[i], power[i]);
        states(t, i) += cmul(power[i], carry[c][i]);
      }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t c = 1; c < chunks; ++c)
      pool.emplace_back(fixup, c);
    fixup(0);
  }

  ScanResult out;
  out.y = RMatrix(len, h);
  for (std::size_t t = 0; t < len; ++t) {
    const cd* r = nullptr;
    if (readout == Readout::current_state)
      r = &states(t, 0);
    else
      r = t == 0 ? x0.data() : &states(t - 1, 0);
    for (std::size_t j = 0; j < h; ++j) {
      double cx = 0.0;
      for (std::size_t i = 0; i < p; ++i)
        cx += d.C(j, i).real() * r[i].real() - d.C(j, i).imag() * r[i].imag();
      out.y(t, j) = cx + d.D[j] * u(t, j);
    }
  }
  if (len == 0)
    out.x_final.assign(x0.begin(), x0.end());
  else
    out.x_final.assign(&states(len - 1, 0), &states(len - 1, 0) + p);
  return out;
}

// ---------------------------------------------------------------------------
// Backpropagation through time

struct ScanGrads {
  std::vector<cd> abar;  // P
  CMatrix bbar;          // P x H
  CMatrix C;             // H x P
  std::vector<double> D; // H
  RMatrix u;             // L x H
  std::vector<cd> x0;    // P

  static ScanGrads zeros(std::size_t p, std::size_t h, std::size_t len) {
    ScanGrads g;
    g.abar.assign(p, cd{});
    g.bbar = CMatrix(p, h);
    g.C = CMatrix(h, p);
    g.D.assign(h, 0.0);
    g.u = RMatrix(len, h);
    g.x0.assign(p, cd{});
    return g;
  }
};

// Quantizers are straight-through: the backward pass differentiates the
// recurrence at the quantized values it actually used.
inline void s5_scan_backward(const PreparedS5& w, const ScanTape& tape, const RMatrix& gy, ScanGrads& g) {
  const std::size_t p = w.p;
  const std::size_t h = w.h;
  const std::size_t len = tape.u.rows;
  if (gy.rows != len || gy.cols != h)
    throw ShapeError("scan output gradient has the wrong shape");
  g.u = RMatrix(len, h);

  std::vector<cd> gx(p, cd{});  // gradient flowing into x_k from later steps
  std::vector<cd> g_prev_readout(p, cd{});
  for (std::size_t kk = len; kk-- > 0;) {
    const std::vector<cd>& x_cur = tape.states[kk + 1];
    const std::vector<cd>& x_prev = tape.states[kk];
    const std::vector<cd>& r = (w.readout == Readout::current_state) ? x_cur : x_prev;

    std::fill(g_prev_readout.begin(), g_prev_readout.end(), cd{});
    for (std::size_t j = 0; j < h; ++j) {
      const double gyj = gy(kk, j);
      g.D[j] += gyj * tape.u(kk, j);
      g.u(kk, j) += gyj * w.D.value[j];
      for (std::size_t i = 0; i < p; ++i) {
        g.C(j, i) += gyj * std::conj(r[i]);
        g_prev_readout[i] += gyj * std::conj(w.C.value[j * p + i]);
      }
    }
    if (w.readout == Readout::current_state)
      for (std::size_t i = 0; i < p; ++i)
        gx[i] += g_prev_readout[i];

    // gx now holds dL/dx_k; push through x_k = Abar x_{k-1} + Bbar u_k
    for (std::size_t i = 0; i < p; ++i) {
      g.abar[i] += cmul(gx[i], std::conj(x_prev[i]));
      for (std::size_t j = 0; j < h; ++j) {
        g.bbar(i, j) += gx[i] * tape.u(kk, j);
        g.u(kk, j) += cmul(gx[i], std::conj(w.bbar.value[i * h + j])).real();
      }
      gx[i] = cmul(gx[i], std::conj(w.abar.value[i]));
    }
    if (w.readout == Readout::previous_state)
      for (std::size_t i = 0; i < p; ++i)
        gx[i] += g_prev_readout[i];
  }
  for (std::size_t i = 0; i < p; ++i)
    g.x0[i] += gx[i];
}

}  // namespace qs5
