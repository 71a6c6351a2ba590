#pragma once

// Synthetic sequence classification: which of K frequency patterns generated
// a noisy length-L sequence. Class k is a sinusoid with
// base_cycles + k * cycle_step cycles over the sequence, random phase and
// amplitude in [0.5, 1.5], plus Gaussian noise.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "qs5/dynsys.hpp"
#include "qs5/error.hpp"

namespace qs5 {

struct ToyTaskConfig {
  std::size_t classes = 4;
  std::size_t length = 256;
  std::size_t train_size = 384;
  std::size_t val_size = 128;
  std::size_t test_size = 512;
  double noise = 1.0;
  double base_cycles = 2.0;   // cycles of class 0
  double cycle_step = 1.0;    // extra cycles per class
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2)
      throw Error("toy task needs at least two classes");
    if (length < 2)
      throw Error("toy task sequences need at least two steps");
    if (train_size == 0 || val_size == 0 || test_size == 0)
      throw Error("toy task splits must be non-empty");
    if (!(noise >= 0.0))
      throw Error("toy task noise must be non-negative");
  }
  bool operator==(const ToyTaskConfig&) const = default;
};

inline Dataset make_toy_split(const ToyTaskConfig& cfg, std::size_t n, std::mt19937_64& rng) {
  Dataset ds;
  ds.task = Task::classification;
  std::uniform_int_distribution<std::size_t> cls(0, cfg.classes - 1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = cls(rng);
    const double cycles = cfg.base_cycles + cfg.cycle_step * static_cast<double>(k);
    const double ph = phase(rng);
    const double a = amp(rng);
    RMatrix x(cfg.length, 1);
    for (std::size_t t = 0; t < cfg.length; ++t)
      x(t, 0) = a * std::sin(2.0 * std::numbers::pi * cycles * static_cast<double>(t) / static_cast<double>(cfg.length) + ph) +
                cfg.noise * noise(rng);
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(static_cast<int>(k));
  }
  return ds;
}

inline DataSplits make_toy_classification(const ToyTaskConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  DataSplits s;
  s.train = make_toy_split(cfg, cfg.train_size, rng);
  s.val = make_toy_split(cfg, cfg.val_size, rng);
  s.test = make_toy_split(cfg, cfg.test_size, rng);
  return s;
}

}  // namespace qs5
