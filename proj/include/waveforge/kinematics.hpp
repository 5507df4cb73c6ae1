#pragma once

// Data-driven wave speed |p_t / p_x| and the mask that keeps interference and
// quiet regions out of the kinematic regularizer.

#include "waveforge/core.hpp"
#include "waveforge/stencil.hpp"
#include "waveforge/wavegen.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace waveforge {

/// All thresholds are relative to a reference amplitude A (the field peak
/// unless given), so the mask does not change when the field is rescaled.
struct MaskThresholds {
  double quiet = 1e-3;   // quiet when |p_x| < quiet A/dx and |p_t| < quiet A/dt
  double floor = 1e-2;   // ratio undefined when |p_x| < floor A/dx
  double tolerance = 0.2;  // relative speed deviation that counts as interference
  int direction_radius = 2;  // neighbourhood (cells, both axes) for the direction test
  int margin = 3;            // cells around detected interference that are masked too
  std::optional<double> reference_amplitude;

  void validate() const {
    require(quiet > 0.0 && floor > 0.0 && tolerance > 0.0, "mask thresholds must be positive");
    require(direction_radius >= 0 && margin >= 0, "mask radii must be non-negative");
    require(!reference_amplitude || *reference_amplitude > 0.0,
            "reference amplitude must be positive");
  }
};

enum class CellClass : unsigned char { valid, quiet, indeterminate, interference };

struct WaveSpeedField {
  Grid speeds;  // m/s, zero wherever mask is false
  BoolGrid mask;
  GridSpec grid;
  DomainSpec domain;
};

struct KinematicState {
  Grid dpdt;
  Grid dpdx;
  Eigen::Matrix<CellClass, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cls;

  BoolGrid mask() const { return cls.unaryExpr([](CellClass c) { return c == CellClass::valid; }); }
};

namespace detail {

inline double median_of(std::vector<double>& v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace detail

/// Classifies every cell of a space-time block.
///
/// A cell is kept when it carries a detectable fluctuation, its spatial
/// gradient clears the floor, and its speed estimate is consistent with
///  - the median of its 3x3 neighbourhood,
///  - the median over the whole block, and
///  - a single propagation direction (sign of p_t p_x) within
///    `direction_radius` cells.
/// None of these use the true c0.
inline KinematicState classify(const Grid& values, double dt, double dx, const MaskThresholds& th) {
  th.validate();
  require(values.rows() >= 3 && values.cols() >= 3, "wave speed needs at least 3 x 3 cells");
  const Eigen::Index nt = values.rows();
  const Eigen::Index nx = values.cols();

  KinematicState ks;
  ks.dpdt = derivative(values, Axis::time, dt);
  ks.dpdx = derivative(values, Axis::space, dx);
  ks.cls.resize(nt, nx);

  const double amp = th.reference_amplitude.value_or(values.cwiseAbs().maxCoeff());
  if (!(amp > 0.0)) {
    ks.cls.fill(CellClass::quiet);
    return ks;
  }
  const double quiet_x = th.quiet * amp / dx;
  const double quiet_t = th.quiet * amp / dt;
  const double floor_x = th.floor * amp / dx;

  Grid raw = Grid::Zero(nt, nx);
  std::vector<double> candidates;
  for (Eigen::Index i = 0; i < nt; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      const double gx = std::abs(ks.dpdx(i, j));
      const double gt = std::abs(ks.dpdt(i, j));
      if (gx < quiet_x && gt < quiet_t) {
        ks.cls(i, j) = CellClass::quiet;
      } else if (gx < floor_x) {
        ks.cls(i, j) = CellClass::indeterminate;
      } else {
        ks.cls(i, j) = CellClass::valid;
        raw(i, j) = gt / gx;
        candidates.push_back(raw(i, j));
      }
    }
  }
  if (candidates.empty()) return ks;
  const double global = detail::median_of(candidates);

  auto candidate = [&](Eigen::Index i, Eigen::Index j) {
    return i >= 0 && i < nt && j >= 0 && j < nx && ks.cls(i, j) == CellClass::valid;
  };

  BoolGrid flagged = BoolGrid::Constant(nt, nx, false);
  std::vector<double> local;
  const int r = th.direction_radius;
  for (Eigen::Index i = 0; i < nt; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      if (!candidate(i, j)) continue;
      const double s = raw(i, j);
      if (std::abs(s - global) > th.tolerance * global) {
        flagged(i, j) = true;
        continue;
      }
      local.clear();
      for (Eigen::Index di = -1; di <= 1; ++di)
        for (Eigen::Index dj = -1; dj <= 1; ++dj)
          if (candidate(i + di, j + dj)) local.push_back(raw(i + di, j + dj));
      const double med = detail::median_of(local);
      if (std::abs(s - med) > th.tolerance * med) {
        flagged(i, j) = true;
        continue;
      }
      bool rightward = false;
      bool leftward = false;
      for (Eigen::Index di = -r; di <= r; ++di) {
        for (Eigen::Index dj = -r; dj <= r; ++dj) {
          if (!candidate(i + di, j + dj)) continue;
          const double prod = ks.dpdt(i + di, j + dj) * ks.dpdx(i + di, j + dj);
          (prod < 0.0 ? rightward : leftward) = true;
        }
      }
      if (rightward && leftward) flagged(i, j) = true;
    }
  }
  const int m = th.margin;
  for (Eigen::Index i = 0; i < nt; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      if (!flagged(i, j)) continue;
      for (Eigen::Index a = std::max<Eigen::Index>(0, i - m); a <= std::min<Eigen::Index>(nt - 1, i + m); ++a)
        for (Eigen::Index b = std::max<Eigen::Index>(0, j - m); b <= std::min<Eigen::Index>(nx - 1, j + m); ++b)
          if (ks.cls(a, b) == CellClass::valid || (a == i && b == j)) ks.cls(a, b) = CellClass::interference;
    }
  }
  return ks;
}

inline BoolGrid interference_mask(const PressureField& field, const MaskThresholds& th) {
  return classify(field.values, field.grid.dt, field.grid.dx, th).mask();
}

inline WaveSpeedField wave_speed(const PressureField& field, const MaskThresholds& th) {
  const KinematicState ks = classify(field.values, field.grid.dt, field.grid.dx, th);
  WaveSpeedField out{Grid::Zero(field.values.rows(), field.values.cols()), ks.mask(), field.grid,
                     field.domain};
  for (Eigen::Index i = 0; i < out.speeds.rows(); ++i)
    for (Eigen::Index j = 0; j < out.speeds.cols(); ++j)
      if (out.mask(i, j)) out.speeds(i, j) = std::abs(ks.dpdt(i, j) / ks.dpdx(i, j));
  return out;
}

/// Mean speed over unmasked cells, or 0 when every cell is masked.
inline double mean_unmasked_speed(const WaveSpeedField& ws) {
  const auto n = ws.mask.count();
  return n == 0 ? 0.0 : ws.speeds.sum() / static_cast<double>(n);
}

}  // namespace waveforge
