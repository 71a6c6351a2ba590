#pragma once

// Adam, evaluation, and the three training pipelines (QAT, PTQ evaluation,
// QAFT). One run owns its model and optimizer; gradients are reduced in
// sample order so runs are bit-reproducible.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qs5/dynsys.hpp"
#include "qs5/error.hpp"
#include "qs5/model.hpp"
#include "qs5/quant_config.hpp"
#include "qs5/serialize.hpp"

namespace qs5 {

enum class LrSchedule { constant, cosine };
enum class CheckpointSelection { best_validation, best_test, final_epoch };

struct QaftConfig {
  bool enabled = false;
  double lr_fraction = 0.01;
  double epoch_fraction = 0.10;
  bool operator==(const QaftConfig&) const = default;
};

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 16;
  double lr = 1e-2;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::string qcfg_name = "FP";
  LrSchedule lr_schedule = LrSchedule::cosine;
  CheckpointSelection selection = CheckpointSelection::best_validation;
  QaftConfig qaft;
  double clip_norm = 1.0;                // global-norm gradient clipping ...
  bool clip_fp = false;                  // ... applied to quantized runs, and to FP runs when set
  double divergence_factor = 1e3;        // loss above this multiple of the initial loss ...
  int divergence_patience = 3;           // ... for this many consecutive epochs stops the run
  std::string dump_path;                 // state dump on divergence; empty disables
  std::optional<int> grad_bits;          // fake-quantize each gradient array before the update; off by default

  void validate() const {
    if (epochs < 1)
      throw Error("epochs must be at least 1");
    if (batch_size < 1)
      throw Error("batch size must be at least 1");
    if (!(lr > 0.0))
      throw Error("learning rate must be positive");
    if (!(qaft.lr_fraction > 0.0 && qaft.lr_fraction <= 1.0) ||
        !(qaft.epoch_fraction > 0.0 && qaft.epoch_fraction <= 1.0))
      throw Error("QAFT fractions must lie in (0, 1]");
    if (grad_bits)
      check_bits(*grad_bits);
  }
  bool operator==(const TrainConfig&) const = default;
};

inline std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }
inline std::string to_string(CheckpointSelection s) {
  switch (s) {
    case CheckpointSelection::best_validation: return "best_validation";
    case CheckpointSelection::best_test: return "best_test";
    case CheckpointSelection::final_epoch: return "final";
  }
  return "best_validation";
}
inline LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant")
    return LrSchedule::constant;
  if (s == "cosine")
    return LrSchedule::cosine;
  throw ParseError("unknown lr schedule '" + s + "'");
}
inline CheckpointSelection parse_selection(const std::string& s) {
  if (s == "best_validation")
    return CheckpointSelection::best_validation;
  if (s == "best_test")
    return CheckpointSelection::best_test;
  if (s == "final")
    return CheckpointSelection::final_epoch;
  throw ParseError("unknown checkpoint selection '" + s + "'");
}

// ---------------------------------------------------------------------------
// Adam with bias correction and decoupled weight decay

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;
};

inline OptState make_opt_state(const ModelParams& p) { return {zeros_like(p), zeros_like(p), 0}; }

// Parameters stay on the f32 grid after every update.
inline void adam_step(ModelParams& params, const ModelParams& grads, OptState& opt, double lr,
                      double weight_decay = 0.0, const AdamHyper& hp = {}) {
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  std::vector<std::span<const double>> gs;
  std::vector<std::span<double>> ms, vs;
  for_each_param(grads, [&](const ParamInfo&, std::span<const double> g) { gs.push_back(g); });
  for_each_param(opt.m, [&](const ParamInfo&, std::span<double> x) { ms.push_back(x); });
  for_each_param(opt.v, [&](const ParamInfo&, std::span<double> x) { vs.push_back(x); });
  std::size_t a = 0;
  for_each_param(params, [&](const ParamInfo&, std::span<double> p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = gs[a][i];
      double& m = ms[a][i];
      double& v = vs[a][i];
      m = hp.beta1 * m + (1.0 - hp.beta1) * g;
      v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
      const double update = (m / c1) / (std::sqrt(v / c2) + hp.eps) + weight_decay * p[i];
      p[i] = round_to_f32(p[i] - lr * update);
    }
    ++a;
  });
}

// Keeps Re(Lambda) strictly negative so the discretization stays stable and
// non-singular.
inline void project_stable(ModelParams& params, double max_real = -1e-4) {
  for (BlockParams& b : params.blocks)
    for (cd& l : b.ssm.lambda)
      if (l.real() > max_real)
        l = {round_to_f32(max_real), l.imag()};
}

inline double global_norm(const ModelParams& g) {
  double sq = 0.0;
  for_each_param(g, [&](const ParamInfo&, std::span<const double> v) {
    for (double x : v)
      sq += x * x;
  });
  return std::sqrt(sq);
}

inline void quantize_gradients(ModelParams& g, int bits) {
  for_each_param(g, [&](const ParamInfo&, std::span<double> v) {
    const std::vector<double> q = fake_quant(v, bits);
    std::copy(q.begin(), q.end(), v.begin());
  });
}

inline void clip_global_norm(ModelParams& g, double max_norm) {
  const double n = global_norm(g);
  if (n > max_norm && n > 0.0) {
    const double f = max_norm / n;
    for_each_param(g, [&](const ParamInfo&, std::span<double> v) {
      for (double& x : v)
        x *= f;
    });
  }
}

// ---------------------------------------------------------------------------
// Evaluation

// True when larger metric values are better (accuracy) rather than smaller (sMAPE).
inline bool higher_is_better(Task t) { return t == Task::classification; }

inline double evaluate(const ModelBundle& m, const Dataset& ds) {
  if (ds.size() == 0)
    throw Error("cannot evaluate on an empty dataset");
  const PreparedModel pm = prepare_model(m);
  if (m.task == Task::classification) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const RMatrix out = forward_sample(m, pm, ds.inputs[i]);
      const auto best = std::max_element(out.data.begin(), out.data.end()) - out.data.begin();
      correct += best == ds.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
  }
  SmapeAccumulator acc;
  for (std::size_t i = 0; i < ds.size(); ++i)
    acc.add(ds.targets[i].data, forward_sample(m, pm, ds.inputs[i]).data);
  return acc.value();
}

inline double dataset_loss(const ModelBundle& m, const Dataset& ds) {
  const PreparedModel pm = prepare_model(m);
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const RMatrix out = forward_sample(m, pm, ds.inputs[i]);
    total += m.task == Task::classification ? cross_entropy(out.data, ds.labels[i]) : mse_loss(out.data, ds.targets[i].data);
  }
  return total / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double test_metric = 0.0;
  double eval_metric = 0.0;  // the metric used for checkpoint selection
  double wall_time_s = 0.0;
};

enum class RunStatus { converged, non_converged };

struct TrainResult {
  ModelBundle model;            // selected checkpoint
  ModelBundle final_model;
  std::vector<EpochRecord> history;
  std::map<int, ModelBundle> snapshots;  // requested epoch -> model after that epoch
  RunStatus status = RunStatus::converged;
  std::string failure;
  int best_epoch = 0;
  double initial_loss = 0.0;
  double base_lr = 0.0;
  int epochs_planned = 0;
};

inline double scheduled_lr(LrSchedule s, double base, int epoch, int epochs) {
  if (s == LrSchedule::constant || epochs <= 1)
    return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

inline void write_state_dump(const std::string& path, const TrainResult& r, int epoch, double loss) {
  if (path.empty())
    return;
  nlohmann::json j;
  j["status"] = "non_converged";
  j["reason"] = r.failure;
  j["epoch"] = epoch;
  j["last_loss"] = std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json(std::to_string(loss));
  j["initial_loss"] = std::isfinite(r.initial_loss) ? nlohmann::json(r.initial_loss) : nlohmann::json(nullptr);
  j["quant"] = render_name(r.final_model.qcfg);
  j["epochs_completed"] = r.history.size();
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

// Runs `epochs` epochs from `init`. Divergence (a non-finite loss, or a loss
// above divergence_factor x the initial loss for divergence_patience
// consecutive epochs) ends the run with status non_converged.
inline TrainResult run_training(const ModelBundle& init, const TrainConfig& cfg, const DataSplits& data,
                                double base_lr, int epochs, LrSchedule schedule,
                                const std::vector<int>& snapshot_epochs = {}) {
  if (data.train.size() == 0 || data.val.size() == 0 || data.test.size() == 0)
    throw Error("training needs non-empty train, val and test splits");
  TrainResult res;
  res.model = init;
  res.final_model = init;
  res.base_lr = base_lr;
  res.epochs_planned = epochs;

  ModelBundle m = init;
  const bool quantized = !m.qcfg.is_fp();
  const bool hib = higher_is_better(m.task);
  auto fail = [&](const std::string& why, int epoch, double loss) {
    res.status = RunStatus::non_converged;
    res.failure = why;
    res.final_model = m;
    write_state_dump(cfg.dump_path, res, epoch, loss);
    return res;
  };

  try {
    res.initial_loss = dataset_loss(m, data.train);
  } catch (const NonFiniteError& e) {
    res.initial_loss = std::numeric_limits<double>::quiet_NaN();
    return fail(std::string("untrained model is non-finite: ") + e.what(), 0, res.initial_loss);
  } catch (const OverflowError& e) {
    res.initial_loss = std::numeric_limits<double>::quiet_NaN();
    return fail(std::string("untrained model overflows: ") + e.what(), 0, res.initial_loss);
  }
  if (!std::isfinite(res.initial_loss))
    return fail("untrained model loss is non-finite", 0, res.initial_loss);

  OptState opt = make_opt_state(m.params);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::optional<double> best;
  int bad_epochs = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const double lr = scheduled_lr(schedule, base_lr, epoch - 1, epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        Batch batch;
        for (std::size_t i = start; i < stop; ++i) {
          batch.inputs.push_back(&data.train.inputs[order[i]]);
          if (m.task == Task::regression)
            batch.targets.push_back(&data.train.targets[order[i]]);
          else
            batch.labels.push_back(data.train.labels[order[i]]);
        }
        LossAndGrads lg = loss_and_gradients(m, batch);
        loss_sum += lg.loss * static_cast<double>(stop - start);
        if (cfg.grad_bits)
          quantize_gradients(lg.grads, *cfg.grad_bits);
        if (quantized || cfg.clip_fp)
          clip_global_norm(lg.grads, cfg.clip_norm);
        adam_step(m.params, lg.grads, opt, lr, cfg.weight_decay);
        project_stable(m.params);
      }
    } catch (const NonFiniteError& e) {
      return fail(std::string("non-finite value during epoch ") + std::to_string(epoch) + ": " + e.what(), epoch,
                  std::numeric_limits<double>::quiet_NaN());
    } catch (const OverflowError& e) {
      return fail(std::string("overflow during epoch ") + std::to_string(epoch) + ": " + e.what(), epoch,
                  std::numeric_limits<double>::quiet_NaN());
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss))
      return fail("non-finite training loss at epoch " + std::to_string(epoch), epoch, train_loss);
    bad_epochs = train_loss > cfg.divergence_factor * res.initial_loss ? bad_epochs + 1 : 0;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_loss;
    try {
      rec.val_metric = evaluate(m, data.val);
      rec.test_metric = evaluate(m, data.test);
    } catch (const NonFiniteError& e) {
      return fail(std::string("non-finite evaluation at epoch ") + std::to_string(epoch) + ": " + e.what(), epoch,
                  train_loss);
    }
    rec.eval_metric = cfg.selection == CheckpointSelection::best_test ? rec.test_metric : rec.val_metric;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(rec);

    if (std::find(snapshot_epochs.begin(), snapshot_epochs.end(), epoch) != snapshot_epochs.end())
      res.snapshots[epoch] = m;
    const bool improved = !best || (hib ? rec.eval_metric > *best : rec.eval_metric < *best);
    if (cfg.selection == CheckpointSelection::final_epoch || improved) {
      best = rec.eval_metric;
      res.best_epoch = epoch;
      res.model = m;
    }
    if (bad_epochs >= cfg.divergence_patience)
      return fail("loss exceeded " + std::to_string(cfg.divergence_factor) + "x the initial loss for " +
                      std::to_string(bad_epochs) + " consecutive epochs",
                  epoch, train_loss);
  }
  res.final_model = m;
  return res;
}

inline TrainResult train_qat(const ModelBundle& init, const TrainConfig& cfg, const DataSplits& data) {
  cfg.validate();
  ModelBundle m = init;
  const QuantConfig q = parse_quant_config(cfg.qcfg_name);
  if (!(m.qcfg == q)) {
    m.qcfg = q;
    m.ops = OpsConfig::defaults_for(q);
  }
  return run_training(m, cfg, data, cfg.lr, cfg.epochs, cfg.lr_schedule);
}

inline int qaft_epochs(const TrainConfig& cfg) {
  return std::max(1, static_cast<int>(std::ceil(cfg.qaft.epoch_fraction * cfg.epochs - 1e-9)));
}

inline double qaft_lr(const TrainConfig& cfg) { return cfg.lr * cfg.qaft.lr_fraction; }

// Continues training an FP model under cfg.qcfg_name at lr * lr_fraction for
// ceil(epoch_fraction * epochs) epochs with a constant schedule. The model
// after the first epoch is kept as snapshot 1.
inline TrainResult finetune_qaft(const ModelBundle& fp, const TrainConfig& cfg, const DataSplits& data,
                                 std::optional<OpsConfig> ops = std::nullopt) {
  cfg.validate();
  const QuantConfig q = parse_quant_config(cfg.qcfg_name);
  ModelBundle m = fp;
  m.qcfg = q;
  m.ops = ops.value_or(q.is_fp() ? fp.ops : OpsConfig::defaults_for(q));
  m.frozen.clear();
  return run_training(m, cfg, data, qaft_lr(cfg), qaft_epochs(cfg), LrSchedule::constant, {1});
}

// ---------------------------------------------------------------------------
// Logs

inline void write_history_csv(const std::vector<EpochRecord>& h, std::ostream& out) {
  out << "epoch,lr,train_loss,eval_metric,val_metric,test_metric,wall_time_s\n" << std::setprecision(17);
  for (const EpochRecord& r : h)
    out << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.eval_metric << "," << r.val_metric << ","
        << r.test_metric << "," << r.wall_time_s << "\n";
}

inline void write_history_csv(const std::vector<EpochRecord>& h, const std::string& path) {
  std::ofstream out(path);
  if (!out)
    throw FormatError("cannot open '" + path + "' for writing");
  write_history_csv(h, out);
}

struct HistoryRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double eval_metric = 0.0;
};

inline std::vector<HistoryRow> read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw FormatError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("epoch,lr,train_loss,eval_metric", 0) != 0)
    throw FormatError("'" + path + "' is not a run log");
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::stringstream ss(line);
    std::string cell;
    HistoryRow r;
    std::getline(ss, cell, ',');
    r.epoch = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.lr = std::stod(cell);
    std::getline(ss, cell, ',');
    r.train_loss = std::stod(cell);
    std::getline(ss, cell, ',');
    r.eval_metric = std::stod(cell);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace qs5
