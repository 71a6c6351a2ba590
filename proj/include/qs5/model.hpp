#pragma once

// Stacked S5 network:
//
//   encoder -> depth x [norm -> S5 -> activation -> gate -> residual] -> decoder
//
// The gate is x * sigma(W x + b) with sigma the logistic or hard sigmoid.
// Classification pools the final residual stream over time before decoding;
// regression decodes every step.
//
// Training uses fake quantization with straight-through gradients. When both
// operands of a product are quantized the product is accumulated on integer
// codes and rescaled once, which is what an int32 kernel computes.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "qs5/error.hpp"
#include "qs5/qops.hpp"
#include "qs5/quant.hpp"
#include "qs5/quant_config.hpp"
#include "qs5/ssm.hpp"
#include "qs5/tensor.hpp"

namespace qs5 {

enum class Task { regression, classification };
enum class Activation { gelu, qgelu };
enum class GateFn { sigmoid, hard_sigmoid };

struct OpsConfig {
  Activation activation = Activation::gelu;
  GateFn gate = GateFn::sigmoid;

  // qGELU and the hard sigmoid replace GELU and the sigmoid under every
  // quantized config.
  static OpsConfig defaults_for(const QuantConfig& q) {
    if (q.is_fp())
      return {Activation::gelu, GateFn::sigmoid};
    return {Activation::qgelu, GateFn::hard_sigmoid};
  }
  bool operator==(const OpsConfig&) const = default;
};

struct ModelDims {
  std::size_t h_in = 1;
  std::size_t h = 4;
  std::size_t p = 4;
  std::size_t depth = 1;
  std::size_t h_out = 1;
  bool operator==(const ModelDims&) const = default;
};

struct BlockParams {
  std::vector<double> norm_gamma;
  std::vector<double> norm_beta;
  S5Params ssm;
  RMatrix gate_w;  // H x H
  std::vector<double> gate_b;
  bool operator==(const BlockParams&) const = default;
};

struct ModelParams {
  RMatrix enc_w;  // H x H_in
  std::vector<double> enc_b;
  std::vector<BlockParams> blocks;
  RMatrix dec_w;  // H_out x H
  std::vector<double> dec_b;
  bool operator==(const ModelParams&) const = default;
};

// Which bit width applies when an array is statically quantized.
enum class WeightGroup { none, weight, ssm_weight };

struct ParamInfo {
  std::string name;
  std::array<std::uint32_t, 4> shape{1, 1, 1, 1};
  bool is_complex = false;
  WeightGroup group = WeightGroup::none;
};

// Visits every trainable array in declaration order. Complex arrays are
// exposed as interleaved (re, im) doubles.
template <class Params, class F>
void for_each_param(Params& params, F&& f) {
  using Real = std::conditional_t<std::is_const_v<Params>, const double, double>;
  auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  auto real = [&](std::string name, auto& vec, std::array<std::uint32_t, 4> shape, WeightGroup g) {
    f(ParamInfo{std::move(name), shape, false, g}, std::span<Real>(vec.data(), vec.size()));
  };
  auto cplx = [&](std::string name, auto& vec, std::array<std::uint32_t, 4> shape, WeightGroup g) {
    f(ParamInfo{std::move(name), shape, true, g}, std::span<Real>(reinterpret_cast<Real*>(vec.data()), vec.size() * 2));
  };
  real("encoder.weight", params.enc_w.data, {u32(params.enc_w.rows), u32(params.enc_w.cols), 1, 1}, WeightGroup::weight);
  real("encoder.bias", params.enc_b, {u32(params.enc_b.size()), 1, 1, 1}, WeightGroup::none);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto& blk = params.blocks[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    const auto h = u32(blk.norm_gamma.size());
    const auto p = u32(blk.ssm.lambda.size());
    real(pre + "norm.gamma", blk.norm_gamma, {h, 1, 1, 1}, WeightGroup::weight);
    real(pre + "norm.beta", blk.norm_beta, {h, 1, 1, 1}, WeightGroup::weight);
    cplx(pre + "ssm.lambda", blk.ssm.lambda, {p, 1, 1, 1}, WeightGroup::none);
    cplx(pre + "ssm.B", blk.ssm.B.data, {u32(blk.ssm.B.rows), u32(blk.ssm.B.cols), 1, 1}, WeightGroup::none);
    cplx(pre + "ssm.C", blk.ssm.C.data, {u32(blk.ssm.C.rows), u32(blk.ssm.C.cols), 1, 1}, WeightGroup::ssm_weight);
    real(pre + "ssm.D", blk.ssm.D, {h, 1, 1, 1}, WeightGroup::ssm_weight);
    real(pre + "ssm.log_delta", blk.ssm.log_delta, {p, 1, 1, 1}, WeightGroup::none);
    real(pre + "gate.weight", blk.gate_w.data, {u32(blk.gate_w.rows), u32(blk.gate_w.cols), 1, 1},
         WeightGroup::weight);
    real(pre + "gate.bias", blk.gate_b, {h, 1, 1, 1}, WeightGroup::none);
  }
  real("decoder.weight", params.dec_w.data, {u32(params.dec_w.rows), u32(params.dec_w.cols), 1, 1},
       WeightGroup::weight);
  real("decoder.bias", params.dec_b, {u32(params.dec_b.size()), 1, 1, 1}, WeightGroup::none);
}

// Integer payload of a statically quantized array (complex arrays interleaved).
struct FrozenArray {
  std::string name;
  QTensor payload;
  bool operator==(const FrozenArray&) const = default;
};

struct ModelBundle {
  Task task = Task::regression;
  ModelDims dims;
  QuantConfig qcfg;
  OpsConfig ops;
  std::uint64_t seed = 0;
  Readout readout = Readout::current_state;
  ModelParams params;
  std::vector<FrozenArray> frozen;  // non-empty after post-training quantization

  bool operator==(const ModelBundle&) const = default;
};

inline std::size_t parameter_count(const ModelDims& d) {
  const std::size_t block = 2 * d.h + s5_parameter_count(d.p, d.h) + d.h * d.h + d.h;
  return d.h * d.h_in + d.h + d.depth * block + d.h_out * d.h + d.h_out;
}

inline std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for_each_param(params, [&](const ParamInfo&, std::span<const double> v) { n += v.size(); });
  return n;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_param(z, [](const ParamInfo&, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
  return z;
}

inline ModelBundle init_model(Task task, const ModelDims& dims, std::uint64_t seed, const QuantConfig& qcfg = {},
                              std::optional<OpsConfig> ops = std::nullopt) {
  if (dims.h_in == 0 || dims.h == 0 || dims.p == 0 || dims.depth == 0 || dims.h_out == 0)
    throw ShapeError("model dimensions must be positive");
  ModelBundle m;
  m.task = task;
  m.dims = dims;
  m.qcfg = qcfg;
  m.ops = ops.value_or(OpsConfig::defaults_for(qcfg));
  m.seed = seed;

  std::mt19937_64 rng(seed);
  auto uniform = [&](RMatrix& w, std::size_t rows, std::size_t cols) {
    w = RMatrix(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.data)
      v = round_to_f32(dist(rng));
  };

  ModelParams& p = m.params;
  uniform(p.enc_w, dims.h, dims.h_in);
  p.enc_b.assign(dims.h, 0.0);
  for (std::size_t b = 0; b < dims.depth; ++b) {
    BlockParams blk;
    blk.norm_gamma.assign(dims.h, 1.0);
    blk.norm_beta.assign(dims.h, 0.0);
    blk.ssm = init_s5(dims.p, dims.h, rng());
    uniform(blk.gate_w, dims.h, dims.h);
    blk.gate_b.assign(dims.h, 0.0);
    p.blocks.push_back(std::move(blk));
  }
  uniform(p.dec_w, dims.h_out, dims.h);
  p.dec_b.assign(dims.h_out, 0.0);
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass

struct PreparedBlock {
  DiscreteS5 disc;
  PreparedS5 scan;
  FqTensor gate_w;
};

// Fake-quantized weights for one forward pass; weight scales come from the
// current weight values.
struct PreparedModel {
  FqTensor enc_w;
  std::vector<PreparedBlock> blocks;
  FqTensor dec_w;
};

inline PreparedModel prepare_model(const ModelBundle& m) {
  const QuantConfig& q = m.qcfg;
  PreparedModel pm;
  pm.enc_w = fake_quant_tensor(m.params.enc_w.data, q.weight_bits());
  for (const auto& blk : m.params.blocks) {
    PreparedBlock pb;
    pb.disc = discretize_zoh(blk.ssm);
    pb.scan = prepare_scan(pb.disc, q.scan_quant(), m.readout);
    pb.gate_w = fake_quant_tensor(blk.gate_w.data, q.weight_bits());
    pm.blocks.push_back(std::move(pb));
  }
  pm.dec_w = fake_quant_tensor(m.params.dec_w.data, q.weight_bits());
  return pm;
}

// y(t, o) = sum_i w(o, i) x(t, i) + b(o)
inline RMatrix dense(const FqTensor& w, std::size_t out, std::size_t in, const FqTensor& x, std::size_t rows,
                     std::span<const double> bias) {
  RMatrix y(rows, out);
  if (w.active && x.active) {
    const double scale = w.scale * x.scale;
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i)
          acc += w.code[o * in + i] * x.code[t * in + i];
        y(t, o) = acc / scale + bias[o];
      }
  } else {
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i)
          acc += w.value[o * in + i] * x.value[t * in + i];
        y(t, o) = acc + bias[o];
      }
  }
  return y;
}

inline void dense_backward(const FqTensor& w, std::size_t out, std::size_t in, const FqTensor& x, std::size_t rows,
                           const RMatrix& gy, std::span<double> dw, std::span<double> db, RMatrix* dx) {
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gy(t, o);
      db[o] += g;
      for (std::size_t i = 0; i < in; ++i)
        dw[o * in + i] += g * x.value[t * in + i];
    }
  if (dx)
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t i = 0; i < in; ++i) {
        double acc = 0.0;
        for (std::size_t o = 0; o < out; ++o)
          acc += gy(t, o) * w.value[o * in + i];
        (*dx)(t, i) += acc;
      }
}

struct BlockTape {
  LayerNormCache norm;
  ScanTape scan;
  std::vector<double> act_in;  // activation input as the activation saw it
  FqTensor act;
  RMatrix gate_pre;
  FqTensor gate;
};

struct SampleTape {
  FqTensor input;
  std::vector<BlockTape> blocks;
  FqTensor dec_in;
  std::size_t len = 0;
};

inline RMatrix forward_sample(const ModelBundle& m, const PreparedModel& pm, const RMatrix& u,
                              SampleTape* tape = nullptr) {
  const ModelDims& d = m.dims;
  const QuantConfig& q = m.qcfg;
  const std::optional<int> a = q.act_bits();
  if (u.cols != d.h_in)
    throw ShapeError("input width " + std::to_string(u.cols) + " does not match model input " +
                     std::to_string(d.h_in));
  const std::size_t len = u.rows;
  if (len == 0)
    throw ShapeError("empty input sequence");

  SampleTape local;
  SampleTape& tp = tape ? *tape : local;
  tp.len = len;
  tp.blocks.assign(d.depth, {});

  tp.input = fake_quant_tensor(u.data, a);
  RMatrix h = dense(pm.enc_w, d.h, d.h_in, tp.input, len, m.params.enc_b);
  const std::vector<cd> x0(d.p, cd{});

  for (std::size_t b = 0; b < d.depth; ++b) {
    const BlockParams& blk = m.params.blocks[b];
    const PreparedBlock& pb = pm.blocks[b];
    BlockTape& bt = tp.blocks[b];

    RMatrix n(len, d.h);
    n.data = layer_norm(h, blk.norm_gamma, blk.norm_beta, q.weight_bits(), a, &bt.norm).value;
    const ScanResult sr = run_scan(pb.scan, n, x0, &bt.scan);

    if (m.ops.activation == Activation::qgelu) {
      if (a) {
        const QTensor qi = quantize(sr.y.data, *a);
        bt.act_in = dequantize(qi);
        bt.act = fq_from_qtensor(qgelu(qi));
      } else {
        bt.act_in = sr.y.data;
        bt.act.value = qgelu_ref(sr.y.data);
      }
    } else {
      bt.act_in = a ? fake_quant(sr.y.data, *a) : sr.y.data;
      std::vector<double> g(bt.act_in.size());
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = gelu(bt.act_in[i]);
      bt.act = fake_quant_tensor(g, a);
    }

    bt.gate_pre = dense(pb.gate_w, d.h, d.h, bt.act, len, blk.gate_b);
    std::vector<double> gv(bt.gate_pre.size());
    for (std::size_t i = 0; i < gv.size(); ++i)
      gv[i] = m.ops.gate == GateFn::hard_sigmoid ? hard_sigmoid(bt.gate_pre.data[i]) : sigmoid(bt.gate_pre.data[i]);
    bt.gate = fake_quant_tensor(gv, a);

    const bool int_product = bt.act.active && bt.gate.active;
    const double prod_scale = bt.act.scale * bt.gate.scale;
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double o = int_product ? (bt.act.code[i] * bt.gate.code[i]) / prod_scale : bt.act.value[i] * bt.gate.value[i];
      h.data[i] += o;
    }
  }

  if (m.task == Task::classification) {
    std::vector<double> pooled(d.h, 0.0);
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t j = 0; j < d.h; ++j)
        pooled[j] += h(t, j);
    for (double& v : pooled)
      v /= static_cast<double>(len);
    tp.dec_in = fake_quant_tensor(pooled, a);
    return dense(pm.dec_w, d.h_out, d.h, tp.dec_in, 1, m.params.dec_b);
  }
  tp.dec_in = fake_quant_tensor(h.data, a);
  return dense(pm.dec_w, d.h_out, d.h, tp.dec_in, len, m.params.dec_b);
}

inline std::vector<RMatrix> model_forward(const ModelBundle& m, std::span<const RMatrix> batch) {
  const PreparedModel pm = prepare_model(m);
  std::vector<RMatrix> out;
  out.reserve(batch.size());
  for (const RMatrix& u : batch)
    out.push_back(forward_sample(m, pm, u));
  return out;
}

inline RMatrix model_forward(const ModelBundle& m, const RMatrix& u) {
  return forward_sample(m, prepare_model(m), u);
}

// ---------------------------------------------------------------------------
// Backward pass

// Per-batch accumulator for the discretized SSM gradients; chained back to
// Lambda, B and log_delta once per batch.
struct DiscreteGrads {
  std::vector<cd> abar;
  CMatrix bbar;
};

struct ModelGradAccumulator {
  ModelParams grads;
  std::vector<DiscreteGrads> disc;
};

inline ModelGradAccumulator make_grad_accumulator(const ModelBundle& m) {
  ModelGradAccumulator acc;
  acc.grads = zeros_like(m.params);
  for (std::size_t b = 0; b < m.dims.depth; ++b)
    acc.disc.push_back({std::vector<cd>(m.dims.p, cd{}), CMatrix(m.dims.p, m.dims.h)});
  return acc;
}

inline void backward_sample(const ModelBundle& m, const PreparedModel& pm, const SampleTape& tp, const RMatrix& gout,
                            ModelGradAccumulator& acc) {
  const ModelDims& d = m.dims;
  const std::size_t len = tp.len;
  ModelParams& g = acc.grads;

  const std::size_t dec_rows = m.task == Task::classification ? 1 : len;
  RMatrix g_dec_in(dec_rows, d.h);
  dense_backward(pm.dec_w, d.h_out, d.h, tp.dec_in, dec_rows, gout, g.dec_w.data, g.dec_b, &g_dec_in);

  RMatrix gh(len, d.h);
  if (m.task == Task::classification) {
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t j = 0; j < d.h; ++j)
        gh(t, j) = g_dec_in(0, j) / static_cast<double>(len);
  } else {
    gh = std::move(g_dec_in);
  }

  for (std::size_t b = d.depth; b-- > 0;) {
    const PreparedBlock& pb = pm.blocks[b];
    const BlockTape& bt = tp.blocks[b];
    BlockParams& gb = g.blocks[b];

    RMatrix g_act(len, d.h);
    RMatrix g_z(len, d.h);
    for (std::size_t i = 0; i < gh.size(); ++i) {
      g_act.data[i] = gh.data[i] * bt.gate.value[i];
      const double g_gate = gh.data[i] * bt.act.value[i];
      const double z = bt.gate_pre.data[i];
      g_z.data[i] = g_gate * (m.ops.gate == GateFn::hard_sigmoid ? hard_sigmoid_grad(z) : sigmoid_grad(z));
    }
    dense_backward(pb.gate_w, d.h, d.h, bt.act, len, g_z, gb.gate_w.data, gb.gate_b, &g_act);

    RMatrix g_y(len, d.h);
    for (std::size_t i = 0; i < g_y.size(); ++i) {
      const double x = bt.act_in[i];
      g_y.data[i] = g_act.data[i] * (m.ops.activation == Activation::qgelu ? qgelu_ref_grad(x) : gelu_grad(x));
    }

    ScanGrads sg = ScanGrads::zeros(d.p, d.h, len);
    s5_scan_backward(pb.scan, bt.scan, g_y, sg);
    for (std::size_t i = 0; i < d.p; ++i)
      acc.disc[b].abar[i] += sg.abar[i];
    for (std::size_t i = 0; i < sg.bbar.size(); ++i)
      acc.disc[b].bbar.data[i] += sg.bbar.data[i];
    for (std::size_t i = 0; i < sg.C.size(); ++i)
      gb.ssm.C.data[i] += sg.C.data[i];
    for (std::size_t j = 0; j < d.h; ++j)
      gb.ssm.D[j] += sg.D[j];

    const RMatrix g_norm_in = layer_norm_backward(bt.norm, sg.u, gb.norm_gamma, gb.norm_beta);
    for (std::size_t i = 0; i < gh.size(); ++i)
      gh.data[i] += g_norm_in.data[i];
  }

  dense_backward(pm.enc_w, d.h, d.h_in, tp.input, len, gh, g.enc_w.data, g.enc_b, nullptr);
}

inline void finish_gradients(const ModelBundle& m, const PreparedModel& pm, ModelGradAccumulator& acc) {
  for (std::size_t b = 0; b < m.dims.depth; ++b)
    discretize_zoh_backward(m.params.blocks[b].ssm, pm.blocks[b].disc, acc.disc[b].abar, acc.disc[b].bbar,
                            acc.grads.blocks[b].ssm);
  for_each_param(acc.grads, [](const ParamInfo& info, std::span<const double> v) {
    for (double x : v)
      if (!std::isfinite(x))
        throw NonFiniteError("non-finite gradient in " + info.name);
  });
}

// ---------------------------------------------------------------------------
// Losses

inline double mse_loss(std::span<const double> pred, std::span<const double> target, std::span<double> grad = {},
                       double norm = 0.0) {
  if (pred.size() != target.size())
    throw ShapeError("prediction and target sizes differ");
  const double n = norm > 0.0 ? norm : static_cast<double>(pred.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    loss += e * e;
    if (!grad.empty())
      grad[i] += 2.0 * e / n;
  }
  return loss / n;
}

inline double cross_entropy(std::span<const double> logits, int label, std::span<double> grad = {},
                            double norm = 1.0) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw ShapeError("class label out of range");
  double mx = logits[0];
  for (double v : logits)
    mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits)
    z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  if (!grad.empty())
    for (std::size_t k = 0; k < logits.size(); ++k)
      grad[k] += (std::exp(logits[k] - log_z) - (static_cast<int>(k) == label ? 1.0 : 0.0)) / norm;
  return (log_z - logits[label]) / norm;
}

struct Batch {
  std::vector<const RMatrix*> inputs;
  std::vector<const RMatrix*> targets;  // regression
  std::vector<int> labels;              // classification
};

struct LossAndGrads {
  double loss = 0.0;
  ModelParams grads;
};

// Mean loss over the batch (MSE over every element, or mean cross-entropy)
// and its gradient with respect to every trainable parameter.
inline LossAndGrads loss_and_gradients(const ModelBundle& m, const Batch& batch) {
  const PreparedModel pm = prepare_model(m);
  ModelGradAccumulator acc = make_grad_accumulator(m);
  const std::size_t n = batch.inputs.size();
  double total_elems = 0.0;
  if (m.task == Task::regression)
    for (const RMatrix* t : batch.targets)
      total_elems += static_cast<double>(t->size());

  double loss = 0.0;
  SampleTape tape;
  for (std::size_t s = 0; s < n; ++s) {
    const RMatrix out = forward_sample(m, pm, *batch.inputs[s], &tape);
    RMatrix gout(out.rows, out.cols);
    if (m.task == Task::regression) {
      if (batch.targets[s]->rows != out.rows || batch.targets[s]->cols != out.cols)
        throw ShapeError("target shape does not match model output");
      loss += mse_loss(out.data, batch.targets[s]->data, gout.data, total_elems);
    } else {
      loss += cross_entropy(out.data, batch.labels[s], gout.data, static_cast<double>(n));
    }
    if (!std::isfinite(loss))
      throw NonFiniteError("non-finite loss");
    backward_sample(m, pm, tape, gout, acc);
  }
  finish_gradients(m, pm, acc);
  return {loss, std::move(acc.grads)};
}

// ---------------------------------------------------------------------------
// Post-training quantization

// Installs `qcfg` and snaps every statically quantizable weight onto its
// grid. Abar and Bbar are derived from continuous parameters and stay
// quantized on the fly; activations keep dynamic per-tensor scales.
inline ModelBundle apply_ptq(const ModelBundle& fp, const QuantConfig& qcfg,
                             std::optional<OpsConfig> ops = std::nullopt) {
  if (qcfg.is_fp())
    return fp;
  ModelBundle m = fp;
  m.qcfg = qcfg;
  m.ops = ops.value_or(OpsConfig::defaults_for(qcfg));
  m.frozen.clear();
  for_each_param(m.params, [&](const ParamInfo& info, std::span<double> v) {
    std::optional<int> bits;
    if (info.group == WeightGroup::weight)
      bits = qcfg.weight_bits();
    else if (info.group == WeightGroup::ssm_weight)
      bits = qcfg.ssm_weight_bits();
    if (!bits)
      return;
    QTensor q = quantize(v, *bits);
    q.shape = {info.shape[0], info.shape[1], info.shape[2], info.shape[3]};
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = static_cast<double>(q.values[i]) / q.scale;
    m.frozen.push_back({info.name, std::move(q)});
  });
  return m;
}

}  // namespace qs5
