#pragma once

// Forecast error norms, seed-ensemble statistics and the overfitting /
// regularization diagnostics computed from trained checkpoints.

#include "waveforge/core.hpp"
#include "waveforge/dataset.hpp"
#include "waveforge/kinematics.hpp"
#include "waveforge/seqmodel.hpp"
#include "waveforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace waveforge {

/// Per horizon step k = 1..Tx, norms of e = p_hat / p - 1 over the cells with
/// |p| >= guard (p0-normalized). L1 is the spatial mean of |e|, Linf its max.
struct ForecastMetrics {
  std::vector<double> time;  // t / T into the horizon
  std::vector<double> l1;
  std::vector<double> linf;
  std::vector<std::size_t> guarded;  // cells excluded by the ratio guard
};

inline ForecastMetrics forecast_metrics(const Grid& predicted, const Grid& target, double step_over_period,
                                        double guard = 1e-2) {
  require(predicted.rows() == target.rows() && predicted.cols() == target.cols(),
          "prediction and target shapes differ");
  ForecastMetrics m;
  for (Eigen::Index k = 0; k < target.rows(); ++k) {
    double sum = 0.0;
    double mx = 0.0;
    std::size_t used = 0;
    std::size_t skipped = 0;
    for (Eigen::Index j = 0; j < target.cols(); ++j) {
      const double p = target(k, j);
      if (std::abs(p) < guard) {
        ++skipped;
        continue;
      }
      const double e = std::abs(predicted(k, j) / p - 1.0);
      sum += e;
      mx = std::max(mx, e);
      ++used;
    }
    m.time.push_back(static_cast<double>(k + 1) * step_over_period);
    m.l1.push_back(used ? sum / static_cast<double>(used) : 0.0);
    m.linf.push_back(mx);
    m.guarded.push_back(skipped);
  }
  return m;
}

/// Recursive rollout on a held-out pair followed by the error norms.
inline ForecastMetrics forecast_errors(const ModelParams& params, const SequencePair& pair,
                                       double step_over_period, bool stateful = true, double guard = 1e-2) {
  const Grid pred = rollout_recursive(params, pair.input, stateful);
  return forecast_metrics(pred, pair.target, step_over_period, guard);
}

struct RelativeDelta {
  std::vector<std::optional<double>> l1;  // nullopt where the plain norm is zero
  std::vector<std::optional<double>> linf;
};

inline std::optional<double> relative_change(double value, double reference) {
  if (reference == 0.0) return std::nullopt;
  return (value - reference) / reference;
}

/// (physics - plain) / plain per step and norm.
inline RelativeDelta relative_errors(const ForecastMetrics& physics, const ForecastMetrics& plain) {
  require(physics.l1.size() == plain.l1.size(), "horizon lengths differ");
  RelativeDelta d;
  for (std::size_t k = 0; k < plain.l1.size(); ++k) {
    d.l1.push_back(relative_change(physics.l1[k], plain.l1[k]));
    d.linf.push_back(relative_change(physics.linf[k], plain.linf[k]));
  }
  return d;
}

/// (norm_late - norm_early) / norm_early, e.g. 3500 against 2750 epochs.
inline RelativeDelta overfit_delta(const ForecastMetrics& late, const ForecastMetrics& early) {
  return relative_errors(late, early);
}

/// Relative change of the output-gate weight L2 norm between two checkpoints.
inline double weight_increment(const ModelParams& late, const ModelParams& early) {
  const Vector a = late.output_gate_weights();
  const Vector b = early.output_gate_weights();
  require(a.size() == b.size(), "checkpoint architectures differ");
  const double nb = b.norm();
  require(nb > 0.0, "reference output-gate weights are all zero");
  return (a.norm() - nb) / nb;
}

/// L2 norm of c_hat - c over training windows, restricted to cells unmasked
/// in the target. Predicted cells whose |p_x| falls below the floor count as
/// speed zero.
inline double wavespeed_l2_error(const ModelParams& params, const std::vector<SequencePair>& windows,
                                 double dt, double dx, const MaskThresholds& th, bool stateful = true) {
  double sq = 0.0;
  const double floor_x = th.floor / dx;
  for (const auto& pair : windows) {
    const TargetKinematics tk = target_kinematics(pair, dt, dx, th);
    const Grid pred = rollout_recursive(params, pair.input, stateful);
    const Grid block = with_ring(pair.input.row(pair.input.rows() - 1), pred);
    const Grid a = derivative(block, Axis::time, dt);
    const Grid d = derivative(block, Axis::space, dx);
    for (Eigen::Index i = 0; i < tk.mask.rows(); ++i) {
      for (Eigen::Index j = 0; j < tk.mask.cols(); ++j) {
        if (!tk.mask(i, j)) continue;
        const double den = d(i + 1, j);
        const double c_hat = std::abs(den) < floor_x ? 0.0 : std::abs(a(i + 1, j) / den);
        const double diff = c_hat - tk.speed(i, j);
        sq += diff * diff;
      }
    }
  }
  return std::sqrt(sq);
}

/// Normalized difference of wave-speed L2 errors against a reference run
/// (earlier checkpoint for case A, plain model for case B).
inline double wavespeed_delta(double error, double reference_error) {
  require(reference_error > 0.0, "reference wave-speed error is zero");
  return (error - reference_error) / reference_error;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // unbiased (n - 1)
  std::size_t count = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.count = xs.size();
  if (xs.empty()) return m;
  // Shifted by the first sample so identical inputs give exactly zero spread.
  const double shift = xs.front();
  const auto n = static_cast<double>(xs.size());
  double offset = 0.0;
  for (double x : xs) offset += x - shift;
  offset /= n;
  m.mean = shift + offset;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - shift - offset) * (x - shift - offset);
    m.stddev = std::sqrt(ss / (n - 1.0));
  }
  return m;
}

/// Metrics of one trained run on every test case.
struct RunMetrics {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::vector<ForecastMetrics> cases;  // one per test case
};

struct EnsembleStats {
  // [case][step]
  std::vector<std::vector<MeanStd>> l1;
  std::vector<std::vector<MeanStd>> linf;
  std::size_t runs = 0;
  std::size_t expected = 0;  // runs requested; coverage = runs / expected
  std::optional<std::uint64_t> best_seed;
};

/// Seed with the lowest summed rank over every (case, step, norm) entry.
/// Ties go to the lower seed.
inline std::optional<std::uint64_t> best_network(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) return std::nullopt;
  std::vector<std::size_t> score(runs.size(), 0);
  auto rank_by = [&](auto value_of) {
    std::vector<std::size_t> idx(runs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double va = value_of(runs[a]);
      const double vb = value_of(runs[b]);
      return va != vb ? va < vb : runs[a].seed < runs[b].seed;
    });
    for (std::size_t r = 0; r < idx.size(); ++r) score[idx[r]] += r;
  };
  const std::size_t ncase = runs.front().cases.size();
  for (std::size_t c = 0; c < ncase; ++c) {
    const std::size_t nstep = runs.front().cases[c].l1.size();
    for (std::size_t k = 0; k < nstep; ++k) {
      rank_by([&](const RunMetrics& r) { return r.cases.at(c).l1.at(k); });
      rank_by([&](const RunMetrics& r) { return r.cases.at(c).linf.at(k); });
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (score[i] < score[best] || (score[i] == score[best] && runs[i].seed < runs[best].seed)) best = i;
  }
  return runs[best].seed;
}

/// Mean and deviation over the seeds of one lambda. `expected` is the number
/// of runs that were requested, so missing runs show up as partial coverage.
inline EnsembleStats ensemble(const std::vector<RunMetrics>& runs, std::size_t expected) {
  EnsembleStats st;
  st.runs = runs.size();
  st.expected = expected;
  if (runs.empty()) return st;
  const std::size_t ncase = runs.front().cases.size();
  for (std::size_t c = 0; c < ncase; ++c) {
    const std::size_t nstep = runs.front().cases[c].l1.size();
    std::vector<MeanStd> l1, linf;
    for (std::size_t k = 0; k < nstep; ++k) {
      std::vector<double> a, b;
      for (const auto& r : runs) {
        a.push_back(r.cases.at(c).l1.at(k));
        b.push_back(r.cases.at(c).linf.at(k));
      }
      l1.push_back(mean_std(a));
      linf.push_back(mean_std(b));
    }
    st.l1.push_back(std::move(l1));
    st.linf.push_back(std::move(linf));
  }
  st.best_seed = best_network(runs);
  return st;
}

/// Horizon steps reported in the error tables (1-based): 1, 3, 5, 7, 9 for Tx = 9.
inline std::vector<std::size_t> reported_steps(std::size_t tx) {
  std::vector<std::size_t> out;
  for (std::size_t k = 1; k <= tx; k += 2) out.push_back(k);
  return out;
}

}  // namespace waveforge
