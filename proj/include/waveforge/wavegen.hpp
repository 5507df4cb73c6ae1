#pragma once

// Ground-truth pressure fields for the 1D acoustic wave equation
//
//   p_tt - c0^2 p_xx = q(x, t),   x in [-L/2, L/2]
//
// solved with a second-order centred stencil in space and an explicit
// three-level update in time, plus a closed-form traveling-wave oracle.

#include "waveforge/core.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace waveforge {

struct DomainSpec {
  double length = 1500.0;      // m
  double wave_speed = 1500.0;  // m/s

  /// Traversal time L / c0. All reported timestamps are t / T.
  double period() const { return length / wave_speed; }
  double left() const { return -0.5 * length; }
  double right() const { return 0.5 * length; }

  void validate() const {
    require(length > 0.0 && std::isfinite(length), "domain length must be positive");
    require(wave_speed > 0.0 && std::isfinite(wave_speed), "wave speed must be positive");
  }
};

enum class TimeShape {
  hann_burst,  // one sine period under a Hann window, starting at onset
  impulsive,   // a single-step kick at onset
};

struct SourceSpec {
  double location = 0.0;    // x0, m
  double onset = 0.0;       // t0, s
  double amplitude = 0.0;   // q0, Gaussian peak of the forcing
  double width = 1.0;       // spatial Gaussian std, m
  TimeShape shape = TimeShape::hann_burst;
  double duration = 1.0;    // burst length for hann_burst, s

  void validate(const DomainSpec& domain) const {
    require(location >= domain.left() && location <= domain.right(),
            "source location outside the domain");
    require(onset >= 0.0, "source onset must be non-negative");
    require(width > 0.0, "source width must be positive");
    require(shape != TimeShape::hann_burst || duration > 0.0,
            "burst duration must be positive");
  }

  double spatial(double x) const {
    const double z = (x - location) / width;
    return std::exp(-0.5 * z * z);
  }

  /// Temporal envelope of the hann_burst forcing. Zero outside [t0, t0 + duration].
  double envelope(double t) const {
    const double u = (t - onset) / duration;
    if (u < 0.0 || u > 1.0) return 0.0;
    const double w = 2.0 * std::numbers::pi * u;
    return std::sin(w) * 0.5 * (1.0 - std::cos(w));
  }
};

struct GridSpec {
  std::size_t nx = 0;
  std::size_t nt = 0;
  double dx = 0.0;
  double dt = 0.0;

  /// Uniform grid spanning the domain, dx = L / (nx - 1).
  static GridSpec uniform(const DomainSpec& domain, std::size_t nx, std::size_t nt, double dt) {
    require(nx >= 2, "grid needs at least two spatial cells");
    return GridSpec{nx, nt, domain.length / static_cast<double>(nx - 1), dt};
  }

  double courant(const DomainSpec& domain) const { return domain.wave_speed * dt / dx; }
  double x(const DomainSpec& domain, std::size_t j) const {
    return domain.left() + static_cast<double>(j) * dx;
  }
  double t(std::size_t i) const { return static_cast<double>(i) * dt; }

  void validate(const DomainSpec& domain) const {
    require(nx >= 3 && nt >= 1, "grid too small");
    require(dx > 0.0 && dt > 0.0, "grid spacings must be positive");
    const double expected = domain.length / static_cast<double>(nx - 1);
    require(std::abs(dx - expected) <= 1e-9 * expected, "dx must equal L / (nx - 1)");
  }
};

struct PressureField {
  Grid values;  // nt x nx
  GridSpec grid;
  DomainSpec domain;
  SourceSpec source;

  std::size_t nt() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t nx() const { return static_cast<std::size_t>(values.cols()); }
  double peak() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }
};

enum class Boundary {
  rigid,             // zero normal pressure gradient; reflects without inversion
  pressure_release,  // p = 0 on the walls; reflects with inversion
};

inline const char* to_string(Boundary b) {
  return b == Boundary::rigid ? "rigid" : "pressure_release";
}

inline Boundary boundary_from_string(const std::string& s) {
  if (s == "rigid") return Boundary::rigid;
  if (s == "pressure_release") return Boundary::pressure_release;
  throw ConfigError("unknown boundary kind: " + s);
}

/// Smooth, compactly supported pulse f used for initial conditions and the
/// traveling-wave oracle.
struct PulseProfile {
  enum class Kind { gaussian, cos4 } kind = Kind::cos4;
  double center = 0.0;
  double width = 1.0;  // std for gaussian, half-support for cos4
  double amplitude = 1.0;

  /// Half-extent of the support; the gaussian is treated as zero beyond 6 std.
  double half_support() const { return kind == Kind::gaussian ? 6.0 * width : width; }

  double operator()(double x) const {
    const double z = (x - center) / width;
    if (kind == Kind::gaussian) {
      return std::abs(z) > 6.0 ? 0.0 : amplitude * std::exp(-0.5 * z * z);
    }
    if (std::abs(z) >= 1.0) return 0.0;
    const double c = std::cos(0.5 * std::numbers::pi * z);
    return amplitude * c * c * c * c;
  }
};

namespace detail {

inline void check_row(const Grid& values, std::size_t step) {
  if (!values.row(static_cast<Eigen::Index>(step)).allFinite()) {
    throw NumericError("non-finite pressure at time step " + std::to_string(step));
  }
}

inline void apply_walls(Eigen::Ref<Vector> row, Boundary boundary) {
  if (boundary == Boundary::pressure_release) {
    row(0) = 0.0;
    row(row.size() - 1) = 0.0;
  }
}

// Second difference p_{j+1} - 2 p_j + p_{j-1}, with a mirrored ghost cell on
// rigid walls and zero on pressure-release walls.
inline double second_difference(const double* p, std::size_t j, std::size_t n, Boundary boundary) {
  if (j == 0) return boundary == Boundary::rigid ? 2.0 * (p[1] - p[0]) : 0.0;
  if (j == n - 1) return boundary == Boundary::rigid ? 2.0 * (p[n - 2] - p[n - 1]) : 0.0;
  return p[j + 1] - 2.0 * p[j] + p[j - 1];
}

}  // namespace detail

/// Solves the wave equation on `grid`. The field starts from rest, or from
/// `initial` (zero initial velocity) when given.
inline PressureField solve_fdm(const DomainSpec& domain, const SourceSpec& source,
                               const GridSpec& grid, Boundary boundary,
                               const std::optional<PulseProfile>& initial = std::nullopt) {
  domain.validate();
  source.validate(domain);
  grid.validate(domain);
  const double courant = grid.courant(domain);
  if (courant > 1.0 + 1e-12) {
    throw ConfigError("unstable grid: Courant number " + std::to_string(courant) + " exceeds 1");
  }

  const std::size_t nx = grid.nx;
  const std::size_t nt = grid.nt;
  const double c2 = courant * courant;
  const double dt2 = grid.dt * grid.dt;

  Vector shape(static_cast<Eigen::Index>(nx));
  for (std::size_t j = 0; j < nx; ++j) shape(j) = source.spatial(grid.x(domain, j));

  // Forcing at step n, already multiplied by dt^2 (kicks use dt instead).
  const std::size_t kick_step =
      static_cast<std::size_t>(std::llround(source.onset / grid.dt));
  auto forcing_scale = [&](std::size_t n) -> double {
    if (source.amplitude == 0.0) return 0.0;
    if (source.shape == TimeShape::impulsive) {
      return n == kick_step ? source.amplitude * grid.dt : 0.0;
    }
    return source.amplitude * source.envelope(grid.t(n)) * dt2;
  };

  PressureField field{Grid::Zero(static_cast<Eigen::Index>(nt), static_cast<Eigen::Index>(nx)),
                      grid, domain, source};
  Grid& p = field.values;

  if (initial) {
    for (std::size_t j = 0; j < nx; ++j) p(0, j) = (*initial)(grid.x(domain, j));
  }
  detail::apply_walls(p.row(0), boundary);
  detail::check_row(p, 0);
  if (nt == 1) return field;

  // Taylor start: p(dt) = p(0) + dt p_t(0) + dt^2/2 (c0^2 p_xx + q), p_t(0) = 0.
  {
    const double s0 = forcing_scale(0);
    const double* prev = p.row(0).data();
    for (std::size_t j = 0; j < nx; ++j) {
      const double lap = detail::second_difference(prev, j, nx, boundary);
      p(1, j) = prev[j] + 0.5 * c2 * lap + 0.5 * s0 * shape(j);
    }
    detail::apply_walls(p.row(1), boundary);
    detail::check_row(p, 1);
  }

  for (std::size_t n = 1; n + 1 < nt; ++n) {
    const double s = forcing_scale(n);
    const double* cur = p.row(n).data();
    const double* old = p.row(n - 1).data();
    double* next = p.row(n + 1).data();
    for (std::size_t j = 0; j < nx; ++j) {
      const double lap = detail::second_difference(cur, j, nx, boundary);
      next[j] = 2.0 * cur[j] - old[j] + c2 * lap + s * shape(j);
    }
    detail::apply_walls(p.row(n + 1), boundary);
    detail::check_row(p, n + 1);
  }
  return field;
}

enum class Direction { right = +1, left = -1 };

/// Exact rigid translation p(x, t) = f(x - c0 t) (right) or f(x + c0 t) (left),
/// sampled on `grid`. Rejects profiles whose support leaves the domain at t = 0.
inline PressureField analytic_traveling_wave(const PulseProfile& profile, const DomainSpec& domain,
                                             const GridSpec& grid, Direction direction) {
  domain.validate();
  grid.validate(domain);
  require(profile.width > 0.0, "pulse width must be positive");
  require(profile.center - profile.half_support() >= domain.left() &&
              profile.center + profile.half_support() <= domain.right(),
          "pulse support exceeds the domain");

  const double sign = direction == Direction::right ? 1.0 : -1.0;
  PressureField field{Grid(static_cast<Eigen::Index>(grid.nt), static_cast<Eigen::Index>(grid.nx)),
                      grid, domain, SourceSpec{}};
  for (std::size_t i = 0; i < grid.nt; ++i) {
    const double shift = sign * domain.wave_speed * grid.t(i);
    for (std::size_t j = 0; j < grid.nx; ++j) {
      field.values(i, j) = profile(grid.x(domain, j) - shift);
    }
  }
  return field;
}

/// Discrete energy of the three-level scheme between levels n and n+1:
///
///   E = 1/2 sum_j w_j ((p^{n+1}_j - p^n_j) / dt)^2
///     + c0^2 / 2 sum_j (p^{n+1}_{j+1} - p^{n+1}_j)(p^n_{j+1} - p^n_j) / dx^2
///
/// with half weights on rigid walls. Conserved exactly by the source-free update.
inline double discrete_energy(const PressureField& field, std::size_t n) {
  require(n + 1 < field.nt(), "energy needs levels n and n + 1");
  const auto& g = field.grid;
  const double c2 = field.domain.wave_speed * field.domain.wave_speed;
  const std::size_t nx = field.nx();
  double kinetic = 0.0;
  double potential = 0.0;
  for (std::size_t j = 0; j < nx; ++j) {
    const double w = (j == 0 || j == nx - 1) ? 0.5 : 1.0;
    const double v = (field.values(n + 1, j) - field.values(n, j)) / g.dt;
    kinetic += w * v * v;
    if (j + 1 < nx) {
      const double a = field.values(n + 1, j + 1) - field.values(n + 1, j);
      const double b = field.values(n, j + 1) - field.values(n, j);
      potential += a * b;
    }
  }
  return 0.5 * kinetic * g.dx + 0.5 * c2 * potential / g.dx;
}

}  // namespace waveforge
