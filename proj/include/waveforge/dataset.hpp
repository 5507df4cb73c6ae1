#pragma once

// Coarse-graining of fine FDM fields onto the ML mesh and slicing into
// normalized (input, target) window pairs.

#include "waveforge/core.hpp"
#include "waveforge/wavegen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace waveforge {

struct WindowConfig {
  std::size_t tx = 9;
  std::size_t stride = 1;

  void validate() const {
    require(tx >= 2, "window length Tx must be at least 2");
    require(stride >= 1, "window stride must be at least 1");
  }
};

struct NormalizationSpec {
  double p0 = 1.0;  // peak |p'| over the training segment

  void validate() const { require(p0 > 0.0 && std::isfinite(p0), "p0 must be positive"); }
  double normalize(double v) const { return v / p0; }
  double denormalize(double v) const { return v * p0; }
};

struct SequencePair {
  Grid input;   // Tx x nx, normalized
  Grid target;  // Tx x nx, normalized, immediately follows input
  std::size_t origin_step = 0;  // ML step of input row 0
  double origin_time = 0.0;     // t / T of input row 0
};

/// Every `factor`-th grid line in both axes. When the factor does not divide
/// the grid and interpolation is allowed, the coarse grid keeps the same
/// space-time extent and is bilinearly interpolated.
inline PressureField coarsen(const PressureField& field, std::size_t factor,
                             bool allow_interpolation = false) {
  require(factor >= 1, "coarsening factor must be positive");
  const std::size_t nt = field.nt();
  const std::size_t nx = field.nx();
  const bool aligned = (nt - 1) % factor == 0 && (nx - 1) % factor == 0;
  if (!aligned && !allow_interpolation) {
    throw ConfigError("coarsening factor " + std::to_string(factor) +
                      " does not divide the grid (nt-1 = " + std::to_string(nt - 1) +
                      ", nx-1 = " + std::to_string(nx - 1) + ")");
  }

  const double ratio = static_cast<double>(factor);
  const std::size_t cnt = static_cast<std::size_t>(std::llround((nt - 1) / ratio)) + 1;
  const std::size_t cnx = static_cast<std::size_t>(std::llround((nx - 1) / ratio)) + 1;
  require(cnx >= 3, "coarse grid would have fewer than 3 cells");

  PressureField out;
  out.domain = field.domain;
  out.source = field.source;
  out.grid.nx = cnx;
  out.grid.nt = cnt;
  out.grid.dx = field.domain.length / static_cast<double>(cnx - 1);
  out.grid.dt = field.grid.dt * static_cast<double>(nt - 1) / static_cast<double>(std::max<std::size_t>(cnt - 1, 1));
  out.values.resize(static_cast<Eigen::Index>(cnt), static_cast<Eigen::Index>(cnx));

  if (aligned) {
    for (std::size_t i = 0; i < cnt; ++i)
      for (std::size_t j = 0; j < cnx; ++j) out.values(i, j) = field.values(i * factor, j * factor);
    return out;
  }

  auto locate = [](double pos, std::size_t n) {
    const double clamped = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    std::size_t lo = static_cast<std::size_t>(std::floor(clamped));
    if (lo >= n - 1) lo = n - 2;
    return std::pair{lo, clamped - static_cast<double>(lo)};
  };
  const double scale_t = static_cast<double>(nt - 1) / static_cast<double>(std::max<std::size_t>(cnt - 1, 1));
  const double scale_x = static_cast<double>(nx - 1) / static_cast<double>(cnx - 1);
  for (std::size_t i = 0; i < cnt; ++i) {
    const auto [ti, wt] = nt > 1 ? locate(static_cast<double>(i) * scale_t, nt) : std::pair{std::size_t{0}, 0.0};
    for (std::size_t j = 0; j < cnx; ++j) {
      const auto [xj, wx] = locate(static_cast<double>(j) * scale_x, nx);
      auto at = [&](std::size_t a, std::size_t b) { return field.values(std::min(a, nt - 1), b); };
      const double lower = (1.0 - wx) * at(ti, xj) + wx * at(ti, xj + 1);
      const double upper = (1.0 - wx) * at(ti + 1, xj) + wx * at(ti + 1, xj + 1);
      out.values(i, j) = (1.0 - wt) * lower + wt * upper;
    }
  }
  return out;
}

/// The pair whose input starts at ML step `origin`.
inline SequencePair window_at(const PressureField& field, std::size_t origin, std::size_t tx,
                              const NormalizationSpec& norm) {
  norm.validate();
  require(origin + 2 * tx <= field.nt(),
          "window at step " + std::to_string(origin) + " runs past the end of the field");
  const auto rows = static_cast<Eigen::Index>(tx);
  SequencePair pair;
  pair.input = field.values.middleRows(static_cast<Eigen::Index>(origin), rows) / norm.p0;
  pair.target = field.values.middleRows(static_cast<Eigen::Index>(origin + tx), rows) / norm.p0;
  pair.origin_step = origin;
  pair.origin_time = field.grid.t(origin) / field.domain.period();
  return pair;
}

inline std::size_t window_count(std::size_t nt, const WindowConfig& w) {
  return nt < 2 * w.tx ? 0 : (nt - 2 * w.tx) / w.stride + 1;
}

inline std::vector<SequencePair> make_windows(const PressureField& field, const WindowConfig& w,
                                              const NormalizationSpec& norm) {
  w.validate();
  norm.validate();
  if (field.nt() < 2 * w.tx) {
    throw ConfigError("field has " + std::to_string(field.nt()) + " time levels; at least " +
                      std::to_string(2 * w.tx) + " are needed for Tx = " + std::to_string(w.tx));
  }
  std::vector<SequencePair> pairs;
  const std::size_t count = window_count(field.nt(), w);
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) pairs.push_back(window_at(field, k * w.stride, w.tx, norm));
  return pairs;
}

struct Split {
  std::vector<SequencePair> train;
  std::vector<SequencePair> test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Partitions `pairs` into train and test by index. Rejects any test target
/// that shares a time level with a training input or target.
inline Split split(const std::vector<SequencePair>& pairs, const std::vector<std::size_t>& test_selector) {
  std::set<std::size_t> chosen;
  for (std::size_t idx : test_selector) {
    require(idx < pairs.size(), "test selector index " + std::to_string(idx) + " out of range");
    require(chosen.insert(idx).second, "duplicate test selector index " + std::to_string(idx));
  }
  Split s;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (chosen.count(k)) {
      s.test.push_back(pairs[k]);
      s.test_indices.push_back(k);
    } else {
      s.train.push_back(pairs[k]);
      s.train_indices.push_back(k);
    }
  }
  for (const auto& t : s.test) {
    const std::size_t tx = static_cast<std::size_t>(t.input.rows());
    const std::size_t lo = t.origin_step + tx;
    const std::size_t hi = t.origin_step + 2 * tx;  // exclusive
    for (const auto& r : s.train) {
      const std::size_t rlo = r.origin_step;
      const std::size_t rhi = r.origin_step + 2 * static_cast<std::size_t>(r.input.rows());
      if (lo < rhi && rlo < hi) {
        throw ConfigError("test window at step " + std::to_string(t.origin_step) +
                          " leaks into training window at step " + std::to_string(r.origin_step));
      }
    }
  }
  return s;
}

struct TestCaseSpec {
  std::string name;
  double input_end = 0.0;  // t / T of the last input state
};

struct DatasetConfig {
  std::size_t factor = 16;
  WindowConfig window{9, 9};
  std::size_t train_steps = 126;  // ML time levels available to training windows
  std::vector<TestCaseSpec> test_cases;
  bool allow_interpolation = false;

  void validate() const {
    window.validate();
    require(factor >= 1, "coarsening factor must be positive");
    require(train_steps >= 2 * window.tx, "training segment shorter than 2 Tx");
  }
};

struct Dataset {
  PressureField ml_field;  // coarse, un-normalized
  NormalizationSpec norm;
  WindowConfig window;
  std::size_t factor = 1;
  std::vector<SequencePair> pairs;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::vector<std::string> test_names;

  std::vector<SequencePair> train() const {
    std::vector<SequencePair> out;
    for (auto k : train_indices) out.push_back(pairs[k]);
    return out;
  }
  std::vector<SequencePair> test() const {
    std::vector<SequencePair> out;
    for (auto k : test_indices) out.push_back(pairs[k]);
    return out;
  }
};

/// Coarsens `fine`, normalizes by the training-segment peak, cuts training
/// windows from the first `train_steps` levels and one test window per case.
inline Dataset build_dataset(const PressureField& fine, const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.factor = cfg.factor;
  ds.window = cfg.window;
  ds.ml_field = coarsen(fine, cfg.factor, cfg.allow_interpolation);
  require(cfg.train_steps <= ds.ml_field.nt(), "training segment longer than the field");

  PressureField train_segment = ds.ml_field;
  train_segment.values = ds.ml_field.values.topRows(static_cast<Eigen::Index>(cfg.train_steps));
  train_segment.grid.nt = cfg.train_steps;
  ds.norm.p0 = train_segment.peak();
  require(ds.norm.p0 > 0.0, "training segment is identically zero; cannot normalize");

  ds.pairs = make_windows(train_segment, cfg.window, ds.norm);
  std::vector<std::size_t> selector;
  const double period = ds.ml_field.domain.period();
  for (const auto& tc : cfg.test_cases) {
    const auto end = static_cast<long long>(std::llround(tc.input_end * period / ds.ml_field.grid.dt));
    require(end + 1 >= static_cast<long long>(cfg.window.tx), "test case '" + tc.name + "' starts before t = 0");
    const auto origin = static_cast<std::size_t>(end + 1 - static_cast<long long>(cfg.window.tx));
    selector.push_back(ds.pairs.size());
    ds.pairs.push_back(window_at(ds.ml_field, origin, cfg.window.tx, ds.norm));
    ds.test_names.push_back(tc.name);
  }
  const Split s = split(ds.pairs, selector);
  ds.train_indices = s.train_indices;
  ds.test_indices = s.test_indices;
  return ds;
}

}  // namespace waveforge
