#pragma once

#include "waveforge/dataset.hpp"
#include "waveforge/io.hpp"
#include "waveforge/seqmodel.hpp"
#include "waveforge/training.hpp"
#include "waveforge/wavegen.hpp"

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#ifndef WAVEFORGE_VERSION
#define WAVEFORGE_VERSION "0.1.0"
#endif

namespace waveforge {

/// Everything that determines a run. Times in the source block are seconds;
/// the ML step and test-case times are fractions of T = L / c0.
struct ExperimentConfig {
  DomainSpec domain;
  SourceSpec source;
  Boundary boundary = Boundary::rigid;
  std::size_t ml_nx = 64;
  std::size_t ml_nt = 200;
  double step_over_period = 0.0127;
  DatasetConfig dataset;
  Architecture model;
  RegularizerConfig regularizer;
  OptimizerSchedule optimizer;
  std::vector<double> lambdas = {0.0, 8.5e-5, 1.7e-4, 3.4e-4};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double error_guard = 1e-2;
  std::size_t workers = 1;

  /// Defaults used for the full-size reproduction.
  static ExperimentConfig full() {
    ExperimentConfig c;
    const double period = c.domain.period();
    c.source.location = 0.0;
    c.source.onset = 0.25 * period;
    c.source.width = 0.025 * c.domain.length;
    c.source.duration = 0.1 * period;
    c.source.shape = TimeShape::hann_burst;
    c.source.amplitude = 10.0;
    c.dataset.factor = 16;
    c.dataset.window = {9, 9};
    c.dataset.train_steps = 126;
    c.dataset.test_cases = {{"case1_interference", 2.37}, {"case2_reflection", 1.87}};
    c.model.state_size = c.ml_nx;
    return c;
  }

  /// Same physics on a coarser ML mesh with a small model; runs in seconds.
  static ExperimentConfig smoke() {
    ExperimentConfig c = full();
    c.ml_nx = 32;
    c.model.state_size = 32;
    c.model.hidden = {16, 16};
    // The coarse mesh resolves a pulse in only a few cells; any dilation masks it all.
    c.regularizer.thresholds.margin = 0;
    c.optimizer.epochs = 200;
    c.optimizer.checkpoints = {150, 200};
    c.lambdas = {0.0, 8.5e-5};
    c.seeds = {1, 2};
    return c;
  }

  /// Fine FDM grid, `factor` times finer than the ML mesh in both axes.
  GridSpec fine_grid() const {
    const std::size_t f = dataset.factor;
    return GridSpec::uniform(domain, (ml_nx - 1) * f + 1, (ml_nt - 1) * f + 1,
                             step_over_period * domain.period() / static_cast<double>(f));
  }

  double ml_dt() const { return step_over_period * domain.period(); }
  double ml_dx() const { return domain.length / static_cast<double>(ml_nx - 1); }

  void validate() const {
    domain.validate();
    source.validate(domain);
    dataset.validate();
    model.validate();
    regularizer.validate();
    optimizer.validate();
    require(ml_nx >= 3 && ml_nt >= 3, "ML mesh too small");
    require(step_over_period > 0.0, "ML step must be positive");
    require(model.state_size == ml_nx, "model state size must equal the ML mesh width");
    const GridSpec g = fine_grid();
    require(g.courant(domain) <= 1.0 + 1e-12,
            "fine grid violates the Courant limit (" + std::to_string(g.courant(domain)) + ")");
    require(dataset.train_steps <= ml_nt, "training segment longer than the ML time axis");
    const std::size_t tx = dataset.window.tx;
    for (const auto& tc : dataset.test_cases) {
      const auto end = static_cast<long long>(std::llround(tc.input_end / step_over_period));
      require(end + 1 >= static_cast<long long>(tx) && static_cast<std::size_t>(end) + tx < ml_nt,
              "test case '" + tc.name + "' does not fit in the ML time axis");
    }
    for (double l : lambdas) require(l >= 0.0, "lambdas must be non-negative");
    require(error_guard > 0.0, "error guard must be positive");
    require(workers >= 1, "need at least one worker");
  }
};

inline void to_json(json& j, const TestCaseSpec& t) { j = {{"name", t.name}, {"input_end", t.input_end}}; }
inline void from_json(const json& j, TestCaseSpec& t) {
  t.name = j.at("name").get<std::string>();
  t.input_end = j.at("input_end").get<double>();
}

inline void to_json(json& j, const OptimizerSchedule& s) {
  j = {{"learning_rate", s.learning_rate}, {"decay", s.decay},     {"decay_epochs", s.decay_epochs},
       {"epochs", s.epochs},               {"checkpoints", s.checkpoints}, {"batch_size", s.batch_size},
       {"seed", s.seed},                   {"beta1", s.beta1},     {"beta2", s.beta2},
       {"epsilon", s.epsilon}};
}
inline void from_json(const json& j, OptimizerSchedule& s) {
  s = OptimizerSchedule{};
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.decay = j.value("decay", s.decay);
  s.decay_epochs = j.value("decay_epochs", s.decay_epochs);
  s.epochs = j.value("epochs", s.epochs);
  s.checkpoints = j.value("checkpoints", s.checkpoints);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  s.beta1 = j.value("beta1", s.beta1);
  s.beta2 = j.value("beta2", s.beta2);
  s.epsilon = j.value("epsilon", s.epsilon);
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = {{"schema_version", kSchemaVersion},
       {"domain", c.domain},
       {"source", c.source},
       {"boundary", to_string(c.boundary)},
       {"ml_grid", {{"nx", c.ml_nx}, {"nt", c.ml_nt}, {"step_over_period", c.step_over_period}}},
       {"dataset",
        {{"factor", c.dataset.factor},
         {"window", c.dataset.window},
         {"train_steps", c.dataset.train_steps},
         {"test_cases", c.dataset.test_cases},
         {"allow_interpolation", c.dataset.allow_interpolation}}},
       {"model", c.model},
       {"regularizer", {{"lambda", c.regularizer.lambda}, {"thresholds", c.regularizer.thresholds}}},
       {"optimizer", c.optimizer},
       {"sweep", {{"lambdas", c.lambdas}, {"seeds", c.seeds}, {"workers", c.workers}}},
       {"evaluation", {{"error_guard", c.error_guard}}}};
}

inline void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig::full();
  if (j.value("schema_version", kSchemaVersion) != kSchemaVersion) throw ConfigError("unsupported config schema");
  if (j.contains("domain")) c.domain = j.at("domain").get<DomainSpec>();
  if (j.contains("source")) c.source = j.at("source").get<SourceSpec>();
  if (j.contains("boundary")) c.boundary = boundary_from_string(j.at("boundary").get<std::string>());
  if (j.contains("ml_grid")) {
    const auto& g = j.at("ml_grid");
    c.ml_nx = g.value("nx", c.ml_nx);
    c.ml_nt = g.value("nt", c.ml_nt);
    c.step_over_period = g.value("step_over_period", c.step_over_period);
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    c.dataset.factor = d.value("factor", c.dataset.factor);
    if (d.contains("window")) c.dataset.window = d.at("window").get<WindowConfig>();
    c.dataset.train_steps = d.value("train_steps", c.dataset.train_steps);
    if (d.contains("test_cases")) c.dataset.test_cases = d.at("test_cases").get<std::vector<TestCaseSpec>>();
    c.dataset.allow_interpolation = d.value("allow_interpolation", false);
  }
  if (j.contains("model")) c.model = j.at("model").get<Architecture>();
  if (j.contains("regularizer")) {
    const auto& r = j.at("regularizer");
    c.regularizer.lambda = r.value("lambda", 0.0);
    if (r.contains("thresholds")) c.regularizer.thresholds = r.at("thresholds").get<MaskThresholds>();
  }
  if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<OptimizerSchedule>();
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    c.lambdas = s.value("lambdas", c.lambdas);
    c.seeds = s.value("seeds", c.seeds);
    c.workers = s.value("workers", c.workers);
  }
  if (j.contains("evaluation")) c.error_guard = j.at("evaluation").value("error_guard", c.error_guard);
}

inline ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// 64-bit FNV-1a of the canonical (key-sorted, compact) JSON form, as hex.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string canon = json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace waveforge
