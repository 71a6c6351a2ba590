#pragma once

// Integer-arithmetic inference for fully quantized models. Every product of
// two quantized operands is an int32 multiply-accumulate on the payloads; the
// only floating-point work is rescaling an accumulator by its combined scale,
// adding biases, the layer-norm statistics and the gate nonlinearity.
//
// The rescaling expressions mirror the simulated path in model.hpp, so for
// the same model and input both paths return bit-identical outputs.

#include <string>
#include <vector>

#include "qs5/error.hpp"
#include "qs5/model.hpp"
#include "qs5/qops.hpp"
#include "qs5/quant.hpp"

namespace qs5 {

class IntegerModel {
 public:
  explicit IntegerModel(const ModelBundle& m) : task_(m.task), dims_(m.dims), readout_(m.readout), ops_(m.ops) {
    const QuantConfig& q = m.qcfg;
    if (!q.weight_bits() || !q.act_bits() || !q.ssm_weight_bits() || !q.effective_abar_bits() || !q.ssm_act_bits())
      throw UnsupportedError("integer inference needs every component quantized, got " + render_name(q));
    if (ops_.activation != Activation::qgelu)
      throw UnsupportedError("integer inference needs the qGELU activation");
    w_ = *q.weight_bits();
    a_ = *q.act_bits();
    sa_ = *q.ssm_act_bits();
    const int sw = *q.ssm_weight_bits();
    const int ab = *q.effective_abar_bits();

    const ModelParams& p = m.params;
    enc_wt_ = quantize_transposed(p.enc_w, w_);
    enc_b_ = p.enc_b;
    for (const BlockParams& blk : p.blocks) {
      Block b;
      b.gamma = quantize(blk.norm_gamma, w_);
      b.beta = quantize(blk.norm_beta, w_);
      const DiscreteS5 d = discretize_zoh(blk.ssm);
      b.abar = quantize_complex(d.abar, ab);
      b.bbar = quantize_complex(d.bbar.data, sw);
      b.C = quantize_complex(d.C.data, sw);
      b.D = quantize(d.D, sw);
      b.gate_wt = quantize_transposed(blk.gate_w, w_);
      b.gate_b = blk.gate_b;
      blocks_.push_back(std::move(b));
    }
    dec_wt_ = quantize_transposed(p.dec_w, w_);
    dec_b_ = p.dec_b;
  }

  RMatrix infer(const RMatrix& u) const {
    const std::size_t len = u.rows;
    const std::size_t h = dims_.h;
    if (u.cols != dims_.h_in || len == 0)
      throw ShapeError("integer inference input has the wrong shape");

    RMatrix hs = dense(quantize(u.data, a_, {len, dims_.h_in}), enc_wt_, enc_b_);
    for (const Block& b : blocks_) {
      const QTensor n = layer_norm_int(hs, b);
      const QTensor y = scan_int(b, n, len);
      const QTensor act = qgelu(quantize(dequantize(y), a_, {len, h}));

      const RMatrix z = dense(act, b.gate_wt, b.gate_b);
      std::vector<double> gv(z.size());
      for (std::size_t i = 0; i < gv.size(); ++i)
        gv[i] = ops_.gate == GateFn::hard_sigmoid ? hard_sigmoid(z.data[i]) : sigmoid(z.data[i]);
      const QTensor g = quantize(gv, a_);
      const double prod_scale = act.scale * g.scale;
      for (std::size_t i = 0; i < hs.size(); ++i)
        hs.data[i] += static_cast<double>(checked_mul(act.values[i], g.values[i])) / prod_scale;
    }

    if (task_ == Task::classification) {
      std::vector<double> pooled(h, 0.0);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t j = 0; j < h; ++j)
          pooled[j] += hs(t, j);
      for (double& v : pooled)
        v /= static_cast<double>(len);
      return dense(quantize(pooled, a_, {1, h}), dec_wt_, dec_b_);
    }
    return dense(quantize(hs.data, a_, {len, h}), dec_wt_, dec_b_);
  }

 private:
  struct Block {
    QTensor gamma, beta;
    QComplexTensor abar, bbar, C;
    QTensor D;
    QTensor gate_wt;  // H x H, transposed
    std::vector<double> gate_b;
  };

  static QTensor quantize_transposed(const RMatrix& w, int bits) {
    QTensor q = quantize(w.data, bits);
    std::vector<std::int32_t> t(q.values.size());
    for (std::size_t o = 0; o < w.rows; ++o)
      for (std::size_t i = 0; i < w.cols; ++i)
        t[i * w.rows + o] = q.values[o * w.cols + i];
    q.values = std::move(t);
    q.shape = {w.cols, w.rows};
    return q;
  }

  static RMatrix dense(const QTensor& x, const QTensor& wt, const std::vector<double>& bias) {
    const QAccumulator acc = qdot(x, wt);
    const std::size_t rows = x.shape[0];
    const std::size_t out = wt.shape[1];
    RMatrix y(rows, out);
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t o = 0; o < out; ++o)
        y(t, o) = static_cast<double>(acc.acc[t * out + o]) / acc.combined_scale + bias[o];
    return y;
  }

  QTensor layer_norm_int(const RMatrix& x, const Block& b) const {
    const std::size_t rows = x.rows;
    const std::size_t h = x.cols;
    const QTensor q = quantize(x.data, a_);
    const double s = q.scale;
    const double inv_h = 1.0 / static_cast<double>(h);
    std::vector<double> pre(x.size());
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
      for (std::size_t j = 0; j < h; ++j) {
        const double n = (static_cast<double>(q.values[r * h + j]) - mean_c) / denom;
        const double g = static_cast<double>(b.gamma.values[j]) / b.gamma.scale;
        const double be = static_cast<double>(b.beta.values[j]) / b.beta.scale;
        pre[r * h + j] = n * g + be;
      }
    }
    return quantize(pre, a_);
  }

  QTensor scan_int(const Block& b, const QTensor& n, std::size_t len) const {
    const std::size_t p = dims_.p;
    const std::size_t h = dims_.h;
    const QTensor u = quantize(dequantize(n), sa_);
    QComplexTensor x = quantize_complex(std::vector<cd>(p, cd{}), sa_);
    const double bu_scale = b.bbar.shared_scale * u.scale;
    const double du_scale = b.D.scale * u.scale;

    std::vector<double> ypre(len * h);
    std::vector<cd> xpre(p);
    for (std::size_t k = 0; k < len; ++k) {
      const double ax_scale = b.abar.shared_scale * x.shared_scale;
      for (std::size_t i = 0; i < p; ++i) {
        std::int32_t bu_re = 0, bu_im = 0;
        for (std::size_t j = 0; j < h; ++j) {
          bu_re = checked_mac(bu_re, b.bbar.re.values[i * h + j], u.values[k * h + j]);
          bu_im = checked_mac(bu_im, b.bbar.im.values[i * h + j], u.values[k * h + j]);
        }
        const std::int32_t ar = b.abar.re.values[i], ai = b.abar.im.values[i];
        const std::int32_t xr = x.re.values[i], xi = x.im.values[i];
        const std::int32_t ax_re = checked_mac(checked_mul(ar, xr), -ai, xi);
        const std::int32_t ax_im = checked_mac(checked_mul(ar, xi), ai, xr);
        xpre[i] = {static_cast<double>(ax_re) / ax_scale + static_cast<double>(bu_re) / bu_scale,
                   static_cast<double>(ax_im) / ax_scale + static_cast<double>(bu_im) / bu_scale};
      }
      QComplexTensor next = quantize_complex(xpre, sa_);
      const QComplexTensor& r = readout_ == Readout::current_state ? next : x;
      const double cx_scale = b.C.shared_scale * r.shared_scale;
      for (std::size_t j = 0; j < h; ++j) {
        std::int32_t acc = 0;
        for (std::size_t i = 0; i < p; ++i) {
          acc = checked_mac(acc, b.C.re.values[j * p + i], r.re.values[i]);
          acc = checked_mac(acc, -b.C.im.values[j * p + i], r.im.values[i]);
        }
        const double du = static_cast<double>(checked_mul(b.D.values[j], u.values[k * h + j])) / du_scale;
        ypre[k * h + j] = static_cast<double>(acc) / cx_scale + du;
      }
      x = std::move(next);
    }
    return quantize(ypre, sa_);
  }

  Task task_;
  ModelDims dims_;
  Readout readout_;
  OpsConfig ops_;
  int w_ = 8, a_ = 8, sa_ = 8;
  QTensor enc_wt_;
  std::vector<double> enc_b_;
  std::vector<Block> blocks_;
  QTensor dec_wt_;
  std::vector<double> dec_b_;
};

}  // namespace qs5
