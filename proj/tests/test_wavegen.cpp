#include "waveforge/wavegen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace waveforge;

namespace {

// d'Alembert solution for an initial displacement f with zero velocity.
double dalembert(const PulseProfile& f, double x, double c, double t) {
  return 0.5 * f(x - c * t) + 0.5 * f(x + c * t);
}

double max_error_vs_dalembert(std::size_t nx, double courant, double t_end) {
  DomainSpec d;
  const double dx = d.length / static_cast<double>(nx - 1);
  const double dt = courant * dx / d.wave_speed;
  const auto nt = static_cast<std::size_t>(std::llround(t_end / dt)) + 1;
  const GridSpec g = GridSpec::uniform(d, nx, nt, dt);
  PulseProfile f;
  f.kind = PulseProfile::Kind::gaussian;
  f.width = 0.03 * d.length;
  const PressureField p = solve_fdm(d, SourceSpec{}, g, Boundary::rigid, f);
  double err = 0.0;
  const double t = g.t(nt - 1);
  for (std::size_t j = 0; j < nx; ++j) {
    err = std::max(err, std::abs(p.values(static_cast<Eigen::Index>(nt - 1), static_cast<Eigen::Index>(j)) -
                                 dalembert(f, g.x(d, j), d.wave_speed, t)));
  }
  return err;
}

SourceSpec centered_burst(const DomainSpec& d, double amplitude = 1.0) {
  SourceSpec s;
  s.location = 0.0;
  s.onset = 0.25 * d.period();
  s.amplitude = amplitude;
  s.width = 0.025 * d.length;
  s.duration = 0.1 * d.period();
  return s;
}

GridSpec medium_grid(const DomainSpec& d, double t_end_over_t) {
  const std::size_t nx = 257;
  const double dx = d.length / static_cast<double>(nx - 1);
  const double dt = 0.8 * dx / d.wave_speed;
  const auto nt = static_cast<std::size_t>(std::llround(t_end_over_t * d.period() / dt)) + 1;
  return GridSpec::uniform(d, nx, nt, dt);
}

// Separate excursions of |series| above `level`.
int count_bumps(const std::vector<double>& series, double level) {
  int n = 0;
  bool above = false;
  for (double v : series) {
    const bool now = std::abs(v) > level;
    if (now && !above) ++n;
    above = now;
  }
  return n;
}

}  // namespace

TEST(Wavegen, ZeroAmplitudeSourceGivesZeroField) {
  DomainSpec d;
  SourceSpec s = centered_burst(d, 0.0);
  const PressureField p = solve_fdm(d, s, medium_grid(d, 1.0), Boundary::rigid);
  EXPECT_EQ(p.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Wavegen, MatchesDalembertBeforeWallsAreReached) {
  const double err = max_error_vs_dalembert(801, 0.8, 0.25 * DomainSpec{}.period());
  EXPECT_LT(err, 2e-3);
}

TEST(Wavegen, SecondOrderConvergenceAtFixedCourant) {
  const double t_end = 0.25 * DomainSpec{}.period();
  const double coarse = max_error_vs_dalembert(201, 0.8, t_end);
  const double fine = max_error_vs_dalembert(401, 0.8, t_end);
  EXPECT_GE(std::log2(coarse / fine), 1.9);
}

TEST(Wavegen, RejectsCourantViolationBeforeStepping) {
  DomainSpec d;
  const std::size_t nx = 101;
  const double dx = d.length / 100.0;
  const GridSpec g = GridSpec::uniform(d, nx, 10, 1.01 * dx / d.wave_speed);
  EXPECT_THROW(solve_fdm(d, centered_burst(d), g, Boundary::rigid), ConfigError);
}

TEST(Wavegen, EnergyConservedWithRigidWallsAndNoSource) {
  DomainSpec d;
  const GridSpec g = medium_grid(d, 2.0);
  PulseProfile f;
  f.kind = PulseProfile::Kind::gaussian;
  f.width = 0.03 * d.length;
  const PressureField p = solve_fdm(d, SourceSpec{}, g, Boundary::rigid, f);
  const double e0 = discrete_energy(p, 0);
  ASSERT_GT(e0, 0.0);
  double worst = 0.0;
  for (std::size_t n = 0; n + 1 < g.nt; n += 7) worst = std::max(worst, std::abs(discrete_energy(p, n) / e0 - 1.0));
  EXPECT_LT(worst, 1e-2);
}

TEST(Wavegen, MirrorSymmetricForCenteredSource) {
  DomainSpec d;
  const PressureField p = solve_fdm(d, centered_burst(d), medium_grid(d, 1.5), Boundary::rigid);
  const double scale = p.peak();
  ASSERT_GT(scale, 0.0);
  EXPECT_LT((p.values - p.values.rowwise().reverse()).cwiseAbs().maxCoeff(), 1e-12 * scale);
}

TEST(Wavegen, CenteredSourceReflectsOnceAtEachWallAndInterferesOnce) {
  // Up to 1.6 T: the burst splits, each half reflects once and they meet
  // again at the centre once.
  DomainSpec d;
  const GridSpec g = medium_grid(d, 1.6);
  const PressureField p = solve_fdm(d, centered_burst(d), g, Boundary::rigid);
  const double level = 0.1 * p.peak();
  std::vector<double> left, right, centre;
  const auto mid = static_cast<Eigen::Index>(g.nx / 2);
  for (Eigen::Index i = 0; i < p.values.rows(); ++i) {
    left.push_back(p.values(i, 0));
    right.push_back(p.values(i, p.values.cols() - 1));
    centre.push_back(p.values(i, mid));
  }
  EXPECT_EQ(count_bumps(left, level), 1);
  EXPECT_EQ(count_bumps(right, level), 1);
  EXPECT_EQ(count_bumps(centre, level), 2);  // emission, then the returning pulses
}

TEST(Wavegen, RigidWallKeepsSignPressureReleaseInvertsIt) {
  DomainSpec d;
  const GridSpec g = medium_grid(d, 1.0);
  PulseProfile f;
  f.kind = PulseProfile::Kind::gaussian;
  f.width = 0.03 * d.length;
  const PressureField rigid = solve_fdm(d, SourceSpec{}, g, Boundary::rigid, f);
  const PressureField release = solve_fdm(d, SourceSpec{}, g, Boundary::pressure_release, f);
  // At t = T each half pulse has bounced once and sits back at the centre.
  const auto last = rigid.values.rows() - 1;
  const auto mid = static_cast<Eigen::Index>(g.nx / 2);
  EXPECT_GT(rigid.values(last, mid), 0.5 * f.amplitude);
  EXPECT_LT(release.values(last, mid), -0.5 * f.amplitude);
  EXPECT_EQ(release.values.col(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Wavegen, FieldIsZeroBeforeOnsetOutsideSourceSupport) {
  DomainSpec d;
  const GridSpec g = medium_grid(d, 0.5);
  const SourceSpec s = centered_burst(d);
  const PressureField p = solve_fdm(d, s, g, Boundary::rigid);
  const auto onset = static_cast<Eigen::Index>(std::floor(s.onset / g.dt));
  EXPECT_EQ(p.values.topRows(onset).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TravelingWave, PeakAdvancesOneCourantStepPerStep) {
  DomainSpec d;
  const std::size_t nx = 301;
  const double dx = d.length / 300.0;
  const GridSpec g = GridSpec::uniform(d, nx, 40, dx / d.wave_speed);  // exactly one cell per step
  PulseProfile f;
  f.center = -0.25 * d.length;
  f.width = 0.05 * d.length;
  const PressureField p = analytic_traveling_wave(f, d, g, Direction::right);
  Eigen::Index j0 = 0, jn = 0;
  p.values.row(0).maxCoeff(&j0);
  for (Eigen::Index i = 1; i < 40; ++i) {
    p.values.row(i).maxCoeff(&jn);
    EXPECT_EQ(jn, j0 + i);
  }
}

TEST(TravelingWave, LeftMovingIsMirrorOfRightMoving) {
  DomainSpec d;
  const GridSpec g = GridSpec::uniform(d, 201, 30, 0.5 * d.length / 200.0 / d.wave_speed);
  PulseProfile f;
  f.center = 0.0;
  f.width = 0.05 * d.length;
  const PressureField r = analytic_traveling_wave(f, d, g, Direction::right);
  const PressureField l = analytic_traveling_wave(f, d, g, Direction::left);
  EXPECT_LT((l.values - r.values.rowwise().reverse()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(TravelingWave, SumOfCopiesIsSuperposition) {
  DomainSpec d;
  const GridSpec g = GridSpec::uniform(d, 201, 30, 0.5 * d.length / 200.0 / d.wave_speed);
  PulseProfile a, b;
  a.center = -0.2 * d.length;
  a.width = 0.05 * d.length;
  b.center = 0.2 * d.length;
  b.width = 0.04 * d.length;
  const PressureField ra = analytic_traveling_wave(a, d, g, Direction::right);
  const PressureField lb = analytic_traveling_wave(b, d, g, Direction::left);
  for (std::size_t i = 0; i < g.nt; i += 5) {
    for (std::size_t j = 0; j < g.nx; j += 7) {
      const double x = g.x(d, j), t = g.t(i);
      EXPECT_DOUBLE_EQ(ra.values(i, j) + lb.values(i, j), a(x - d.wave_speed * t) + b(x + d.wave_speed * t));
    }
  }
}

TEST(TravelingWave, RejectsSupportOutsideDomain) {
  DomainSpec d;
  const GridSpec g = GridSpec::uniform(d, 101, 5, 1e-3);
  PulseProfile f;
  f.center = 0.49 * d.length;
  f.width = 0.05 * d.length;
  EXPECT_THROW(analytic_traveling_wave(f, d, g, Direction::right), ConfigError);
}

TEST(Domain, PeriodIsTraversalTime) {
  DomainSpec d{3000.0, 340.0};
  EXPECT_DOUBLE_EQ(d.period(), 3000.0 / 340.0);
}

TEST(Domain, RejectsNonPositiveSpeedOrLength) {
  EXPECT_THROW((DomainSpec{0.0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((DomainSpec{1.0, -1.0}.validate()), ConfigError);
}

TEST(Grid, UniformSpacingAndCourant) {
  DomainSpec d;
  const GridSpec g = GridSpec::uniform(d, 1009, 3185, 0.0127 * d.period() / 16.0);
  EXPECT_DOUBLE_EQ(g.dx, d.length / 1008.0);
  EXPECT_NEAR(g.courant(d), 0.0127 / 16.0 * 1008.0, 1e-12);
  EXPECT_LE(g.courant(d), 1.0);
}

TEST(Boundary, NamesRoundTrip) {
  EXPECT_EQ(boundary_from_string(to_string(Boundary::rigid)), Boundary::rigid);
  EXPECT_EQ(boundary_from_string(to_string(Boundary::pressure_release)), Boundary::pressure_release);
  EXPECT_THROW(boundary_from_string("absorbing"), ConfigError);
}
