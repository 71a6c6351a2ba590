// qs5: generate Mackey-Glass data, train / quantize / fine-tune / evaluate
// S5 models, and run tau x quantization sweeps.
//
// Exit codes: 0 success, 2 usage error, 3 non-convergence, 4 IO or format error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qs5/qs5.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNonConverged = 3;
constexpr int kExitIo = 4;

// Flags shared by every command that builds an ExperimentConfig. Unset flags
// leave the config file (or the defaults) untouched.
struct Overrides {
  std::string config_path;
  std::optional<std::string> task, quant, ops, readout, selection, schedule, out;
  std::optional<int> epochs;
  std::optional<double> lr, tau, dt;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<std::size_t> h, p, depth, batch, steps, context, horizon, stride;

  void attach(CLI::App* cmd, bool with_quant = true) {
    cmd->add_option("--config", config_path, "Experiment config (JSON); defaults apply when omitted");
    cmd->add_option("--task", task, "mackey_glass | toy_classification");
    if (with_quant)
      cmd->add_option("--quant", quant, std::string("Quantization config: ") + std::string(qs5::kQuantGrammar));
    cmd->add_option("--ops", ops, "auto | float | quantized");
    cmd->add_option("--readout", readout, "current_state | previous_state");
    cmd->add_option("--selection", selection, "best_validation | best_test | final");
    cmd->add_option("--schedule", schedule, "cosine | constant");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--lr", lr);
    cmd->add_option("--seed", seed, "Model and training seed");
    cmd->add_option("--data-seed", data_seed, "Dataset seed (defaults to the config value)");
    cmd->add_option("--width", h, "Model width H");
    cmd->add_option("--state", p, "State size P");
    cmd->add_option("--depth", depth);
    cmd->add_option("--batch", batch);
    cmd->add_option("--tau", tau);
    cmd->add_option("--dt", dt);
    cmd->add_option("--steps", steps, "Mackey-Glass series length");
    cmd->add_option("--context", context);
    cmd->add_option("--horizon", horizon);
    cmd->add_option("--stride", stride);
    cmd->add_option("--out", out, "Output directory");
  }

  qs5::ExperimentConfig resolve() const {
    qs5::ExperimentConfig c = config_path.empty() ? qs5::ExperimentConfig{} : qs5::load_experiment_config(config_path);
    if (task)
      c.task = qs5::parse_task_kind(*task);
    if (quant)
      c.train.qcfg_name = qs5::render_name(qs5::parse_quant_config(*quant));
    if (ops)
      c.ops = *ops;
    if (readout)
      c.readout = qs5::parse_readout(*readout);
    if (selection)
      c.train.selection = qs5::parse_selection(*selection);
    if (schedule)
      c.train.lr_schedule = qs5::parse_lr_schedule(*schedule);
    if (epochs)
      c.train.epochs = *epochs;
    if (lr)
      c.train.lr = *lr;
    if (seed)
      c.train.seed = *seed;
    if (data_seed) {
      c.mackey_glass.seed = *data_seed;
      c.toy.seed = *data_seed;
    }
    if (h)
      c.h = *h;
    if (p)
      c.p = *p;
    if (depth)
      c.depth = *depth;
    if (batch)
      c.train.batch_size = *batch;
    if (tau)
      c.mackey_glass.tau = *tau;
    if (dt)
      c.mackey_glass.dt = *dt;
    if (steps)
      c.mackey_glass.steps = *steps;
    if (context)
      c.context = *context;
    if (horizon)
      c.horizon = *horizon;
    if (stride)
      c.stride = *stride;
    if (out)
      c.output_dir = *out;
    qs5::validate(c);
    return c;
  }
};

template <class T>
std::vector<T> parse_list(const std::string& s, T (*conv)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      out.push_back(conv(item));
  if (out.empty())
    throw qs5::ParseError("empty list '" + s + "'");
  return out;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size())
    throw qs5::ParseError("not a number: '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw qs5::ParseError("not a non-negative integer: '" + s + "'");
  return std::stoull(s);
}

std::string to_quant(const std::string& s) { return qs5::render_name(qs5::parse_quant_config(s)); }

void print_summary(const nlohmann::json& s) { std::cout << s.dump(2) << "\n"; }

int exit_for(bool converged) { return converged ? kExitOk : kExitNonConverged; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantized S5 state-space models: data generation, QAT, PTQ, QAFT and sweeps"};
  app.require_subcommand(1);

  // generate
  qs5::MackeyGlassConfig mg;
  std::string gen_out = "mackey_glass";
  auto* gen = app.add_subcommand("generate", "Generate a Mackey-Glass series (CSV) and echo its config");
  gen->add_option("--tau", mg.tau, "Delay, in [0, 100]");
  gen->add_option("--steps", mg.steps, "Rows to emit");
  gen->add_option("--seed", mg.seed, "Seed of the random initial history");
  gen->add_option("--dt", mg.dt, "Euler step");
  gen->add_option("--transient", mg.transient, "Discarded warm-up steps");
  gen->add_option("--beta", mg.beta);
  gen->add_option("--gamma", mg.gamma);
  gen->add_option("--n", mg.n_exp, "Nonlinearity exponent");
  gen->add_option("--out", gen_out, "Output directory");

  // config
  Overrides cfg_ov;
  std::string cfg_file;
  auto* cfg_cmd = app.add_subcommand("config", "Write the fully resolved experiment config");
  cfg_ov.attach(cfg_cmd);
  cfg_cmd->add_option("--file", cfg_file, "Write here instead of stdout");

  // train
  Overrides train_ov;
  auto* train = app.add_subcommand("train", "Train a model (FP, or QAT under --quant)");
  train_ov.attach(train);

  // ptq
  Overrides ptq_ov;
  std::string ptq_model, ptq_quant;
  auto* ptq = app.add_subcommand("ptq", "Quantize a full-precision model without training and evaluate it");
  ptq_ov.attach(ptq, false);
  ptq->add_option("--model", ptq_model, "Full-precision model file")->required();
  ptq->add_option("--quant", ptq_quant, std::string("Target config: ") + std::string(qs5::kQuantGrammar))
      ->required();

  // qaft
  Overrides qaft_ov;
  std::string qaft_model, qaft_quant;
  auto* qaft = app.add_subcommand("qaft", "Fine-tune a full-precision model under quantization");
  qaft_ov.attach(qaft, false);
  qaft->add_option("--model", qaft_model, "Full-precision model file")->required();
  qaft->add_option("--quant", qaft_quant, std::string("Target config: ") + std::string(qs5::kQuantGrammar))
      ->required();

  // eval
  Overrides eval_ov;
  std::string eval_model, eval_metrics;
  auto* ev = app.add_subcommand("eval", "Evaluate a saved model on the configured dataset");
  eval_ov.attach(ev, false);
  ev->add_option("--model", eval_model, "Model file")->required();
  ev->add_option("--metrics", eval_metrics, "Metrics file (default <out>/metrics.json)");

  // sweep
  Overrides sweep_ov;
  std::string taus = "5,25,50", quants = "FP,Abar8,Abar4,Abar2", seeds = "0,1,2,3";
  unsigned workers = 1;
  auto* sweep = app.add_subcommand("sweep", "QAT over tau x quantization config x seed");
  sweep_ov.attach(sweep, false);
  sweep->add_option("--taus", taus, "Comma-separated delays");
  sweep->add_option("--quants", quants, "Comma-separated quantization configs");
  sweep->add_option("--seeds", seeds, "Comma-separated seeds (model and data)");
  sweep->add_option("--workers", workers, "Concurrent cells")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      mg.validate();
      const qs5::MackeyGlassSeries s = qs5::generate_mackey_glass(mg);
      const std::filesystem::path dir = qs5::prepare_output_dir(gen_out);
      qs5::write_series_csv(s, (dir / "series.csv").string());
      qs5::ExperimentConfig echo;
      echo.mackey_glass = mg;
      echo.output_dir = gen_out;
      qs5::write_json(qs5::data_descriptor(echo)["mackey_glass"], (dir / "config.json").string());
      std::cout << "wrote " << (dir / "series.csv").string() << " (" << s.data.rows << " rows)\n";
      return kExitOk;
    }
    if (cfg_cmd->parsed()) {
      const std::string text = qs5::to_json(cfg_ov.resolve()).dump(2) + "\n";
      if (cfg_file.empty()) {
        std::cout << text;
      } else {
        std::ofstream f(cfg_file);
        if (!(f << text))
          throw qs5::FormatError("cannot write '" + cfg_file + "'");
      }
      return kExitOk;
    }
    if (train->parsed()) {
      const qs5::PipelineOutcome o = qs5::run_train_pipeline(train_ov.resolve());
      print_summary(o.summary);
      return exit_for(o.converged);
    }
    if (ptq->parsed()) {
      const qs5::PipelineOutcome o = qs5::run_ptq_pipeline(ptq_ov.resolve(), ptq_model, ptq_quant);
      print_summary(o.summary);
      return exit_for(o.converged);
    }
    if (qaft->parsed()) {
      const qs5::PipelineOutcome o = qs5::run_qaft_pipeline(qaft_ov.resolve(), qaft_model, qaft_quant);
      print_summary(o.summary);
      return exit_for(o.converged);
    }
    if (ev->parsed()) {
      const qs5::ExperimentConfig c = eval_ov.resolve();
      const nlohmann::json m = qs5::run_eval_pipeline(c, eval_model);
      const std::string path =
          eval_metrics.empty() ? (qs5::prepare_output_dir(c.output_dir) / "metrics.json").string() : eval_metrics;
      qs5::write_json(m, path);
      print_summary(m);
      return kExitOk;
    }
    if (sweep->parsed()) {
      const qs5::ExperimentConfig c = sweep_ov.resolve();
      const auto tau_list = parse_list<double>(taus, to_double);
      const auto quant_list = parse_list<std::string>(quants, to_quant);
      const auto seed_list = parse_list<std::uint64_t>(seeds, to_u64);
      const std::filesystem::path dir = qs5::prepare_output_dir(c.output_dir);
      qs5::write_json(qs5::to_json(c), (dir / "config.json").string());
      const qs5::SweepResult r = qs5::run_sweep(c, tau_list, quant_list, seed_list, workers, c.output_dir);
      std::ofstream csv(dir / "sweep.csv");
      qs5::write_sweep_csv(r, csv);
      if (!csv)
        throw qs5::FormatError("cannot write '" + (dir / "sweep.csv").string() + "'");
      qs5::write_sweep_csv(r, std::cout);
      return kExitOk;
    }
  } catch (const qs5::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const qs5::NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNonConverged;
  } catch (const qs5::OverflowError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNonConverged;
  } catch (const qs5::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
