#pragma once

// Mackey-Glass delay differential equation
//
//   Q'(t) = beta * Q(t - tau) / (1 + Q(t - tau)^n) - gamma * Q(t)
//
// integrated with forward Euler, observed through a 10-tap delay embedding
// [Q(t), Q(t - tau/9), ..., Q(t - tau)], plus forecasting windows and sMAPE.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qs5/error.hpp"
#include "qs5/model.hpp"
#include "qs5/tensor.hpp"

namespace qs5 {

struct MackeyGlassConfig {
  double tau = 17.0;
  double beta = 0.2;
  double gamma = 0.1;
  double n_exp = 10.0;
  double dt = 1.0;
  std::size_t steps = 1024;
  std::size_t transient = 500;
  std::uint64_t seed = 0;
  std::size_t channels = 10;

  std::size_t history_len() const { return static_cast<std::size_t>(std::ceil(tau / dt - 1e-12)); }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt))
      throw Error("Mackey-Glass dt must be positive");
    if (!(tau >= 0.0 && tau <= 100.0))
      throw Error("Mackey-Glass tau must lie in [0, 100]");
    if (channels < 1)
      throw Error("Mackey-Glass needs at least one channel");
    if (steps < 1)
      throw Error("Mackey-Glass needs at least one output step");
    if (transient < history_len())
      throw Error("Mackey-Glass transient must cover the delay, ceil(tau/dt) = " + std::to_string(history_len()));
  }
  bool operator==(const MackeyGlassConfig&) const = default;
};

struct MackeyGlassSeries {
  RMatrix data;  // steps x channels
  MackeyGlassConfig config;
};

// Integrates from an explicit history: history[i] is Q at time (i - (len-1)) * dt,
// so the last entry is Q(0). Returns Q at every grid point, history included.
inline std::vector<double> integrate_mackey_glass(const MackeyGlassConfig& cfg, const std::vector<double>& history,
                                                  std::size_t n_steps) {
  const std::size_t nh = cfg.history_len();
  if (history.size() != nh + 1)
    throw Error("Mackey-Glass history must hold ceil(tau/dt) + 1 samples");
  std::vector<double> q(history);
  q.reserve(nh + 1 + n_steps);
  const double lag = cfg.tau / cfg.dt;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const std::size_t cur = nh + k;
    const double pos = static_cast<double>(cur) - lag;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    const double qd = frac == 0.0 ? q[lo] : q[lo] + frac * (q[lo + 1] - q[lo]);
    const double next = q[cur] + cfg.dt * (cfg.beta * qd / (1.0 + std::pow(qd, cfg.n_exp)) - cfg.gamma * q[cur]);
    if (!std::isfinite(next))
      throw NonFiniteError("Mackey-Glass state became non-finite at step " + std::to_string(k + 1));
    q.push_back(next);
  }
  return q;
}

inline MackeyGlassSeries embed_mackey_glass(const MackeyGlassConfig& cfg, const std::vector<double>& q) {
  const std::size_t nh = cfg.history_len();
  const double lag = cfg.tau / cfg.dt;
  const double tap = cfg.channels > 1 ? lag / static_cast<double>(cfg.channels - 1) : 0.0;
  MackeyGlassSeries s;
  s.config = cfg;
  s.data = RMatrix(cfg.steps, cfg.channels);
  for (std::size_t r = 0; r < cfg.steps; ++r) {
    const std::size_t cur = nh + cfg.transient + r;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const double pos = static_cast<double>(cur) - tap * static_cast<double>(c);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const double frac = pos - static_cast<double>(lo);
      s.data(r, c) = frac == 0.0 ? q[lo] : q[lo] + frac * (q[lo + 1] - q[lo]);
    }
  }
  return s;
}

inline MackeyGlassSeries generate_mackey_glass(const MackeyGlassConfig& cfg, const std::vector<double>& history) {
  cfg.validate();
  const std::vector<double> q = integrate_mackey_glass(cfg, history, cfg.transient + cfg.steps - 1);
  return embed_mackey_glass(cfg, q);
}

// Initial history drawn i.i.d. uniform in [0.5, 1.5].
inline MackeyGlassSeries generate_mackey_glass(const MackeyGlassConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> init(0.5, 1.5);
  std::vector<double> history(cfg.history_len() + 1);
  for (double& v : history)
    v = init(rng);
  return generate_mackey_glass(cfg, history);
}

// ---------------------------------------------------------------------------
// Forecasting windows

struct Dataset {
  Task task = Task::regression;
  std::vector<RMatrix> inputs;
  std::vector<RMatrix> targets;  // regression
  std::vector<int> labels;       // classification

  std::size_t size() const { return inputs.size(); }
};

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

inline std::size_t forecast_window_count(std::size_t rows, std::size_t context, std::size_t horizon,
                                         std::size_t stride = 1) {
  if (context + horizon > rows)
    return 0;
  return (rows - context - horizon) / stride + 1;
}

// Windows over rows [begin, end): input rows t..t+context-1, target rows
// shifted by `horizon`.
inline Dataset forecast_windows(const RMatrix& data, std::size_t begin, std::size_t end, std::size_t context,
                                std::size_t horizon, std::size_t stride = 1) {
  Dataset ds;
  const std::size_t ch = data.cols;
  const std::size_t n = forecast_window_count(end - begin, context, horizon, stride);
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t t0 = begin + w * stride;
    RMatrix in(context, ch), out(context, ch);
    for (std::size_t k = 0; k < context; ++k)
      for (std::size_t c = 0; c < ch; ++c) {
        in(k, c) = data(t0 + k, c);
        out(k, c) = data(t0 + k + horizon, c);
      }
    ds.inputs.push_back(std::move(in));
    ds.targets.push_back(std::move(out));
  }
  return ds;
}

inline Dataset make_forecast_windows(const MackeyGlassSeries& s, std::size_t context, std::size_t horizon = 1,
                                     std::size_t stride = 1) {
  if (context == 0 || horizon == 0 || stride == 0)
    throw Error("context, horizon and stride must be positive");
  if (context + horizon > s.data.rows)
    throw Error("series too short for the requested context and horizon");
  return forecast_windows(s.data, 0, s.data.rows, context, horizon, stride);
}

// Rows are cut 80/10/10 into contiguous segments before windowing, so no
// window crosses a split boundary.
inline DataSplits make_forecast_dataset(const MackeyGlassSeries& s, std::size_t context, std::size_t horizon = 1,
                                        std::size_t stride = 1) {
  if (context == 0 || horizon == 0 || stride == 0)
    throw Error("context, horizon and stride must be positive");
  const std::size_t rows = s.data.rows;
  const std::size_t a = rows * 8 / 10;
  const std::size_t b = rows * 9 / 10;
  if (context + horizon > rows - b || context + horizon > b - a)
    throw Error("series too short: each split needs at least context + horizon = " +
                std::to_string(context + horizon) + " rows");
  return {forecast_windows(s.data, 0, a, context, horizon, stride),
          forecast_windows(s.data, a, b, context, horizon, stride),
          forecast_windows(s.data, b, rows, context, horizon, stride)};
}

// ---------------------------------------------------------------------------
// sMAPE = 200/t * sum |y - yhat| / (|y| + |yhat|); 0/0 terms count as 0.

struct SmapeAccumulator {
  double sum = 0.0;
  std::size_t count = 0;

  void add(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size())
      throw ShapeError("sMAPE inputs differ in length");
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double den = std::abs(y[i]) + std::abs(yhat[i]);
      if (den > 0.0)
        sum += std::abs(y[i] - yhat[i]) / den;
    }
    count += y.size();
  }
  double value() const {
    if (count == 0)
      throw ShapeError("sMAPE of an empty sequence");
    return 200.0 * sum / static_cast<double>(count);
  }
};

inline double smape(std::span<const double> y, std::span<const double> yhat) {
  SmapeAccumulator acc;
  acc.add(y, yhat);
  return acc.value();
}

// ---------------------------------------------------------------------------
// CSV export

inline void write_series_csv(const MackeyGlassSeries& s, std::ostream& out) {
  out << "t";
  for (std::size_t c = 0; c < s.data.cols; ++c)
    out << ",c" << c;
  out << "\n" << std::setprecision(17);
  for (std::size_t r = 0; r < s.data.rows; ++r) {
    out << static_cast<double>(r) * s.config.dt;
    for (std::size_t c = 0; c < s.data.cols; ++c)
      out << "," << s.data(r, c);
    out << "\n";
  }
}

inline void write_series_csv(const MackeyGlassSeries& s, const std::string& path) {
  std::ofstream out(path);
  if (!out)
    throw FormatError("cannot open '" + path + "' for writing");
  write_series_csv(s, out);
  if (!out)
    throw FormatError("write to '" + path + "' failed");
}

// Reads the data columns back; the config must be supplied separately.
inline RMatrix read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,c0", 0) != 0)
    throw FormatError("'" + path + "' is not a series CSV (expected header t,c0..)");
  std::size_t cols = 0;
  for (char ch : line)
    cols += ch == ',';
  std::vector<double> vals;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("bad number '" + cell + "' in '" + path + "'");
      }
      ++n;
    }
    if (n != cols)
      throw FormatError("ragged row in '" + path + "'");
    ++rows;
  }
  RMatrix m(rows, cols);
  m.data = std::move(vals);
  return m;
}

}  // namespace qs5
