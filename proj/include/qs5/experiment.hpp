#pragma once

// Experiment configuration (JSON file form), dataset construction and the
// train / ptq / qaft / eval / sweep pipelines behind the command-line tool.
// Every pipeline writes the fully resolved configuration next to its outputs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qs5/dynsys.hpp"
#include "qs5/error.hpp"
#include "qs5/model.hpp"
#include "qs5/quant_config.hpp"
#include "qs5/serialize.hpp"
#include "qs5/toy_task.hpp"
#include "qs5/train.hpp"

namespace qs5 {

inline constexpr int kSummarySchemaVersion = 1;
inline constexpr const char* kEmbeddingDescription =
    "10-tap uniform delay embedding [Q(t), Q(t - tau/9), ..., Q(t - tau)], linear interpolation between Euler samples";

enum class TaskKind { mackey_glass, toy_classification };

struct ExperimentConfig {
  TaskKind task = TaskKind::mackey_glass;
  std::size_t h = 4;
  std::size_t p = 12;
  std::size_t depth = 2;
  std::string ops = "auto";  // auto | float | quantized
  Readout readout = Readout::current_state;
  TrainConfig train;
  MackeyGlassConfig mackey_glass;
  ToyTaskConfig toy;
  std::size_t context = 96;
  std::size_t horizon = 1;
  std::size_t stride = 2;
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

inline std::string to_string(TaskKind t) { return t == TaskKind::mackey_glass ? "mackey_glass" : "toy_classification"; }

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "mackey_glass")
    return TaskKind::mackey_glass;
  if (s == "toy_classification")
    return TaskKind::toy_classification;
  throw ParseError("unknown task '" + s + "' (expected mackey_glass or toy_classification)");
}

inline ModelDims model_dims(const ExperimentConfig& c) {
  if (c.task == TaskKind::mackey_glass)
    return {c.mackey_glass.channels, c.h, c.p, c.depth, c.mackey_glass.channels};
  return {1, c.h, c.p, c.depth, c.toy.classes};
}

inline Task model_task(const ExperimentConfig& c) {
  return c.task == TaskKind::mackey_glass ? Task::regression : Task::classification;
}

inline OpsConfig resolve_ops(const std::string& ops, const QuantConfig& q) {
  if (ops == "auto")
    return OpsConfig::defaults_for(q);
  if (ops == "float")
    return {Activation::gelu, GateFn::sigmoid};
  if (ops == "quantized")
    return {Activation::qgelu, GateFn::hard_sigmoid};
  throw ParseError("unknown ops setting '" + ops + "' (expected auto, float or quantized)");
}

// ---------------------------------------------------------------------------
// JSON form

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  const MackeyGlassConfig& mg = c.mackey_glass;
  const ToyTaskConfig& toy = c.toy;
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["model"] = {{"h", c.h}, {"p", c.p}, {"depth", c.depth}, {"ops", c.ops}, {"readout", to_string(c.readout)}};
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"seed", t.seed},
                {"quant", t.qcfg_name},
                {"lr_schedule", to_string(t.lr_schedule)},
                {"selection", to_string(t.selection)},
                {"clip_norm", t.clip_norm},
                {"clip_fp", t.clip_fp},
                {"divergence_factor", t.divergence_factor},
                {"divergence_patience", t.divergence_patience},
                {"grad_bits", t.grad_bits ? nlohmann::json(*t.grad_bits) : nlohmann::json(nullptr)},
                {"qaft", {{"lr_fraction", t.qaft.lr_fraction}, {"epoch_fraction", t.qaft.epoch_fraction}}}};
  j["mackey_glass"] = {{"tau", mg.tau},         {"beta", mg.beta},     {"gamma", mg.gamma},
                       {"n_exp", mg.n_exp},     {"dt", mg.dt},         {"steps", mg.steps},
                       {"transient", mg.transient}, {"seed", mg.seed}, {"channels", mg.channels}};
  j["toy"] = {{"classes", toy.classes},       {"length", toy.length},         {"train_size", toy.train_size},
              {"val_size", toy.val_size},     {"test_size", toy.test_size},   {"noise", toy.noise},
              {"base_cycles", toy.base_cycles}, {"cycle_step", toy.cycle_step}, {"seed", toy.seed}};
  j["data"] = {{"context", c.context}, {"horizon", c.horizon}, {"stride", c.stride}};
  j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object())
    throw ParseError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }) == allowed.end())
      throw ParseError("unknown config key '" + where + (where.empty() ? "" : ".") + it.key() + "'");
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key))
    out = j.at(key).get<T>();
}

}  // namespace detail

// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    detail::check_keys(j, {"task", "model", "train", "mackey_glass", "toy", "data", "output_dir"}, "");
    if (j.contains("task"))
      c.task = parse_task_kind(j.at("task").get<std::string>());
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::check_keys(m, {"h", "p", "depth", "ops", "readout"}, "model");
      detail::read(m, "h", c.h);
      detail::read(m, "p", c.p);
      detail::read(m, "depth", c.depth);
      detail::read(m, "ops", c.ops);
      if (m.contains("readout"))
        c.readout = parse_readout(m.at("readout").get<std::string>());
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::check_keys(t, {"epochs", "batch_size", "lr", "weight_decay", "seed", "quant", "lr_schedule", "selection",
                             "clip_norm", "clip_fp", "divergence_factor", "divergence_patience", "grad_bits", "qaft"},
                         "train");
      detail::read(t, "epochs", c.train.epochs);
      detail::read(t, "batch_size", c.train.batch_size);
      detail::read(t, "lr", c.train.lr);
      detail::read(t, "weight_decay", c.train.weight_decay);
      detail::read(t, "seed", c.train.seed);
      detail::read(t, "quant", c.train.qcfg_name);
      if (t.contains("lr_schedule"))
        c.train.lr_schedule = parse_lr_schedule(t.at("lr_schedule").get<std::string>());
      if (t.contains("selection"))
        c.train.selection = parse_selection(t.at("selection").get<std::string>());
      detail::read(t, "clip_norm", c.train.clip_norm);
      detail::read(t, "clip_fp", c.train.clip_fp);
      detail::read(t, "divergence_factor", c.train.divergence_factor);
      detail::read(t, "divergence_patience", c.train.divergence_patience);
      if (t.contains("grad_bits") && !t.at("grad_bits").is_null())
        c.train.grad_bits = t.at("grad_bits").get<int>();
      if (t.contains("qaft")) {
        const auto& q = t.at("qaft");
        detail::check_keys(q, {"lr_fraction", "epoch_fraction"}, "train.qaft");
        detail::read(q, "lr_fraction", c.train.qaft.lr_fraction);
        detail::read(q, "epoch_fraction", c.train.qaft.epoch_fraction);
      }
    }
    if (j.contains("mackey_glass")) {
      const auto& m = j.at("mackey_glass");
      detail::check_keys(m, {"tau", "beta", "gamma", "n_exp", "dt", "steps", "transient", "seed", "channels"},
                         "mackey_glass");
      auto& mg = c.mackey_glass;
      detail::read(m, "tau", mg.tau);
      detail::read(m, "beta", mg.beta);
      detail::read(m, "gamma", mg.gamma);
      detail::read(m, "n_exp", mg.n_exp);
      detail::read(m, "dt", mg.dt);
      detail::read(m, "steps", mg.steps);
      detail::read(m, "transient", mg.transient);
      detail::read(m, "seed", mg.seed);
      detail::read(m, "channels", mg.channels);
    }
    if (j.contains("toy")) {
      const auto& t = j.at("toy");
      detail::check_keys(t, {"classes", "length", "train_size", "val_size", "test_size", "noise", "base_cycles",
                             "cycle_step", "seed"},
                         "toy");
      auto& toy = c.toy;
      detail::read(t, "classes", toy.classes);
      detail::read(t, "length", toy.length);
      detail::read(t, "train_size", toy.train_size);
      detail::read(t, "val_size", toy.val_size);
      detail::read(t, "test_size", toy.test_size);
      detail::read(t, "noise", toy.noise);
      detail::read(t, "base_cycles", toy.base_cycles);
      detail::read(t, "cycle_step", toy.cycle_step);
      detail::read(t, "seed", toy.seed);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::check_keys(d, {"context", "horizon", "stride"}, "data");
      detail::read(d, "context", c.context);
      detail::read(d, "horizon", c.horizon);
      detail::read(d, "stride", c.stride);
    }
    detail::read(j, "output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline void validate(const ExperimentConfig& c) {
  c.train.validate();
  parse_quant_config(c.train.qcfg_name);
  resolve_ops(c.ops, {});
  if (c.h == 0 || c.p == 0 || c.depth == 0)
    throw Error("model dimensions must be positive");
  if (c.task == TaskKind::mackey_glass) {
    c.mackey_glass.validate();
    if (c.context == 0 || c.horizon == 0 || c.stride == 0)
      throw Error("context, horizon and stride must be positive");
  } else {
    c.toy.validate();
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw FormatError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out)
    throw FormatError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out)
    throw FormatError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Data

inline nlohmann::json data_descriptor(const ExperimentConfig& c) {
  const nlohmann::json full = to_json(c);
  nlohmann::json d;
  d["task"] = full["task"];
  if (c.task == TaskKind::mackey_glass) {
    d["mackey_glass"] = full["mackey_glass"];
    d["data"] = full["data"];
  } else {
    d["toy"] = full["toy"];
  }
  return d;
}

// CRC32 of the canonical JSON of everything that determines the data.
inline std::uint32_t dataset_fingerprint(const ExperimentConfig& c) {
  const std::string s = data_descriptor(c).dump();
  return detail::crc32_of(s.data(), s.size());
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(8) << std::setfill('0') << v;
  return o.str();
}

inline DataSplits build_data(const ExperimentConfig& c) {
  if (c.task == TaskKind::mackey_glass)
    return make_forecast_dataset(generate_mackey_glass(c.mackey_glass), c.context, c.horizon, c.stride);
  return make_toy_classification(c.toy);
}

inline ModelBundle initial_model(const ExperimentConfig& c) {
  const QuantConfig q = parse_quant_config(c.train.qcfg_name);
  ModelBundle m = init_model(model_task(c), model_dims(c), c.train.seed, q, resolve_ops(c.ops, q));
  m.readout = c.readout;
  return m;
}

inline std::string metric_name(const ExperimentConfig& c) {
  return c.task == TaskKind::mackey_glass ? "smape" : "accuracy";
}

// ---------------------------------------------------------------------------
// Pipelines

struct PipelineOutcome {
  bool converged = true;
  nlohmann::json summary;
};

inline nlohmann::json summary_base(const ExperimentConfig& c, const std::string& command) {
  nlohmann::json s;
  s["schema_version"] = kSummarySchemaVersion;
  s["command"] = command;
  s["task"] = to_string(c.task);
  s["metric"] = metric_name(c);
  s["dataset_fingerprint"] = hex32(dataset_fingerprint(c));
  if (c.task == TaskKind::mackey_glass)
    s["embedding"] = kEmbeddingDescription;
  return s;
}

inline void fill_run_summary(nlohmann::json& s, const TrainResult& r) {
  s["status"] = r.status == RunStatus::converged ? "converged" : "non_converged";
  if (r.status != RunStatus::converged)
    s["failure"] = r.failure;
  s["epochs_planned"] = r.epochs_planned;
  s["epochs_run"] = r.history.size();
  s["lr"] = r.base_lr;
  s["best_epoch"] = r.best_epoch;
  if (std::isfinite(r.initial_loss))
    s["initial_loss"] = r.initial_loss;
  if (!r.history.empty()) {
    const EpochRecord& best = r.history[static_cast<std::size_t>(std::max(r.best_epoch, 1) - 1)];
    s["val_metric"] = best.val_metric;
    s["test_metric"] = best.test_metric;
    s["final_train_loss"] = r.history.back().train_loss;
  }
}

inline std::filesystem::path prepare_output_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw FormatError("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

inline PipelineOutcome run_train_pipeline(const ExperimentConfig& c) {
  validate(c);
  const auto out = prepare_output_dir(c.output_dir);
  write_json(to_json(c), (out / "config.json").string());
  const DataSplits data = build_data(c);
  TrainConfig tc = c.train;
  tc.dump_path = (out / "divergence_dump.json").string();
  const TrainResult r = train_qat(initial_model(c), tc, data);

  write_history_csv(r.history, (out / "log.csv").string());
  PipelineOutcome o;
  o.converged = r.status == RunStatus::converged;
  o.summary = summary_base(c, "train");
  o.summary["quant"] = c.train.qcfg_name;
  o.summary["param_count"] = parameter_count(r.model.params);
  fill_run_summary(o.summary, r);
  if (o.converged)
    save_model(r.model, (out / "model.qssm").string());
  write_json(o.summary, (out / "summary.json").string());
  return o;
}

inline nlohmann::json eval_metrics(const ModelBundle& m, const DataSplits& data) {
  return {{"val_metric", evaluate(m, data.val)}, {"test_metric", evaluate(m, data.test)}};
}

inline PipelineOutcome run_ptq_pipeline(const ExperimentConfig& c, const std::string& model_path,
                                        const std::string& quant) {
  validate(c);
  const QuantConfig q = parse_quant_config(quant);
  const ModelBundle fp = load_model(model_path);
  if (!fp.qcfg.is_fp())
    throw Error("post-training quantization expects a full-precision model, got " + render_name(fp.qcfg));
  const auto out = prepare_output_dir(c.output_dir);
  write_json(to_json(c), (out / "config.json").string());
  const ModelBundle m = apply_ptq(fp, q, q.is_fp() ? std::nullopt : std::optional(resolve_ops(c.ops, q)));
  save_model(m, (out / "model.qssm").string());

  PipelineOutcome o;
  o.summary = summary_base(c, "ptq");
  o.summary["quant"] = render_name(q);
  o.summary["source_model"] = model_path;
  try {
    o.summary.update(eval_metrics(m, build_data(c)));
    o.summary["status"] = "converged";
  } catch (const NonFiniteError& e) {
    o.converged = false;
    o.summary["status"] = "non_converged";
    o.summary["failure"] = e.what();
  }
  write_json(o.summary, (out / "summary.json").string());
  return o;
}

inline PipelineOutcome run_qaft_pipeline(const ExperimentConfig& c, const std::string& model_path,
                                         const std::string& quant) {
  validate(c);
  const QuantConfig q = parse_quant_config(quant);
  const ModelBundle fp = load_model(model_path);
  if (!fp.qcfg.is_fp())
    throw Error("fine-tuning expects a full-precision model, got " + render_name(fp.qcfg));
  const auto out = prepare_output_dir(c.output_dir);
  ExperimentConfig resolved = c;
  resolved.train.qcfg_name = render_name(q);
  write_json(to_json(resolved), (out / "config.json").string());

  const DataSplits data = build_data(c);
  TrainConfig tc = resolved.train;
  tc.dump_path = (out / "divergence_dump.json").string();
  const TrainResult r =
      finetune_qaft(fp, tc, data, q.is_fp() ? std::nullopt : std::optional(resolve_ops(c.ops, q)));
  write_history_csv(r.history, (out / "log.csv").string());

  PipelineOutcome o;
  o.converged = r.status == RunStatus::converged;
  o.summary = summary_base(c, "qaft");
  o.summary["quant"] = render_name(q);
  o.summary["source_model"] = model_path;
  o.summary["pretrain_lr"] = c.train.lr;
  o.summary["pretrain_epochs"] = c.train.epochs;
  o.summary["lr_fraction"] = c.train.qaft.lr_fraction;
  o.summary["epoch_fraction"] = c.train.qaft.epoch_fraction;
  fill_run_summary(o.summary, r);
  if (!r.history.empty()) {
    o.summary["first_epoch"] = {{"val_metric", r.history.front().val_metric},
                                {"test_metric", r.history.front().test_metric}};
    o.summary["final_epoch"] = {{"val_metric", r.history.back().val_metric},
                                {"test_metric", r.history.back().test_metric}};
  }
  if (o.converged) {
    save_model(r.model, (out / "model.qssm").string());
    if (const auto it = r.snapshots.find(1); it != r.snapshots.end())
      save_model(it->second, (out / "model_epoch1.qssm").string());
  }
  write_json(o.summary, (out / "summary.json").string());
  return o;
}

inline nlohmann::json run_eval_pipeline(const ExperimentConfig& c, const std::string& model_path) {
  validate(c);
  const ModelBundle m = load_model(model_path);
  if (m.task != model_task(c) || !(m.dims == model_dims(c)))
    throw Error("model does not match the task and dimensions in the config");
  nlohmann::json s = summary_base(c, "eval");
  s["quant"] = render_name(m.qcfg);
  s["model"] = model_path;
  s.update(eval_metrics(m, build_data(c)));
  return s;
}

// ---------------------------------------------------------------------------
// Sweep: tau x quant x seed, QAT per cell

struct SweepCell {
  double tau = 0.0;
  std::string quant;
  std::uint64_t seed = 0;
  bool converged = false;
  std::string failure;
  double val_metric = std::nan("");
  double test_metric = std::nan("");
  int best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct SweepAggregate {
  double tau = 0.0;
  std::string quant;
  std::size_t converged = 0;
  std::size_t failed = 0;
  double mean_test_metric = std::nan("");
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepAggregate> aggregates;
};

inline ExperimentConfig sweep_cell_config(const ExperimentConfig& base, double tau, const std::string& quant,
                                          std::uint64_t seed) {
  ExperimentConfig c = base;
  c.mackey_glass.tau = tau;
  c.mackey_glass.seed = seed;
  c.toy.seed = seed;
  c.train.seed = seed;
  c.train.qcfg_name = quant;
  return c;
}

inline SweepCell run_sweep_cell(const ExperimentConfig& c, const std::string& cell_dir) {
  SweepCell cell;
  cell.tau = c.mackey_glass.tau;
  cell.quant = c.train.qcfg_name;
  cell.seed = c.train.seed;
  try {
    const DataSplits data = build_data(c);
    TrainConfig tc = c.train;
    if (!cell_dir.empty()) {
      prepare_output_dir(cell_dir);
      write_json(to_json(c), cell_dir + "/config.json");
      tc.dump_path = cell_dir + "/divergence_dump.json";
    }
    const TrainResult r = train_qat(initial_model(c), tc, data);
    if (!cell_dir.empty())
      write_history_csv(r.history, cell_dir + "/log.csv");
    cell.converged = r.status == RunStatus::converged;
    cell.failure = r.failure;
    cell.epochs_run = r.history.size();
    if (cell.converged) {
      cell.best_epoch = r.best_epoch;
      const EpochRecord& best = r.history[static_cast<std::size_t>(r.best_epoch - 1)];
      cell.val_metric = best.val_metric;
      cell.test_metric = best.test_metric;
    }
  } catch (const Error& e) {
    cell.converged = false;
    cell.failure = e.what();
  }
  return cell;
}

inline SweepResult run_sweep(const ExperimentConfig& base, const std::vector<double>& taus,
                             const std::vector<std::string>& quants, const std::vector<std::uint64_t>& seeds,
                             unsigned workers = 1, const std::string& out_dir = "") {
  validate(base);
  for (const std::string& q : quants)
    parse_quant_config(q);
  for (double tau : taus) {
    MackeyGlassConfig mg = base.mackey_glass;
    mg.tau = tau;
    if (base.task == TaskKind::mackey_glass)
      mg.validate();
  }

  struct Job {
    ExperimentConfig cfg;
    std::string dir;
  };
  std::vector<Job> jobs;
  for (double tau : taus)
    for (const std::string& q : quants)
      for (std::uint64_t s : seeds) {
        std::ostringstream dir;
        if (!out_dir.empty())
          dir << out_dir << "/cells/tau" << tau << "_" << q << "_seed" << s;
        jobs.push_back({sweep_cell_config(base, tau, q, s), dir.str()});
      }

  SweepResult res;
  res.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();)
      res.cells[i] = run_sweep_cell(jobs[i].cfg, jobs[i].dir);
  };
  {
    std::vector<std::jthread> pool;
    const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(jobs.size())));
    for (unsigned w = 1; w < n; ++w)
      pool.emplace_back(worker);
    worker();
  }

  std::size_t k = 0;
  for (double tau : taus)
    for (const std::string& q : quants) {
      SweepAggregate a;
      a.tau = tau;
      a.quant = q;
      double sum = 0.0;
      for (std::size_t s = 0; s < seeds.size(); ++s, ++k) {
        const SweepCell& c = res.cells[k];
        if (c.converged) {
          ++a.converged;
          sum += c.test_metric;
        } else {
          ++a.failed;
        }
      }
      if (a.converged > 0)
        a.mean_test_metric = sum / static_cast<double>(a.converged);
      res.aggregates.push_back(a);
    }
  return res;
}

inline std::string cell_status(const SweepCell& c) { return c.converged ? "ok" : "non_converged"; }

inline std::string aggregate_status(const SweepAggregate& a) {
  if (a.failed == 0)
    return "ok";
  return a.converged == 0 ? "non_converged" : "partial";
}

// One table: per-cell rows (kind=cell) followed by per-(tau, quant) means over
// converged seeds (kind=mean).
inline void write_sweep_csv(const SweepResult& r, std::ostream& out) {
  out << "kind,tau,quant,seed,status,n_converged,n_failed,val_metric,test_metric,best_epoch,epochs_run\n"
      << std::setprecision(10);
  auto num = [](double v) { return std::isnan(v) ? std::string() : (std::ostringstream() << std::setprecision(10) << v).str(); };
  for (const SweepCell& c : r.cells)
    out << "cell," << c.tau << "," << c.quant << "," << c.seed << "," << cell_status(c) << ","
        << (c.converged ? 1 : 0) << "," << (c.converged ? 0 : 1) << "," << num(c.val_metric) << ","
        << num(c.test_metric) << "," << c.best_epoch << "," << c.epochs_run << "\n";
  for (const SweepAggregate& a : r.aggregates)
    out << "mean," << a.tau << "," << a.quant << ",," << aggregate_status(a) << "," << a.converged << "," << a.failed
        << ",," << num(a.mean_test_metric) << ",,\n";
}

}  // namespace qs5
