#include "waveforge/config.hpp"
#include "waveforge/dataset.hpp"
#include "waveforge/io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace waveforge;

namespace {

PressureField small_field(std::size_t nx = 129, std::size_t nt = 257) {
  DomainSpec d;
  SourceSpec s;
  s.onset = 0.1 * d.period();
  s.amplitude = 3.0;
  s.width = 0.05 * d.length;
  s.duration = 0.1 * d.period();
  const double dt = 0.5 * (d.length / static_cast<double>(nx - 1)) / d.wave_speed;
  return solve_fdm(d, s, GridSpec::uniform(d, nx, nt, dt), Boundary::rigid);
}

PressureField ramp_field(std::size_t nt, std::size_t nx) {
  DomainSpec d;
  PressureField f{Grid(nt, nx), GridSpec::uniform(d, nx, nt, 1e-3), d, {}};
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t j = 0; j < nx; ++j) f.values(i, j) = 1000.0 * i + j;
  return f;
}

const ExperimentConfig& full_config() {
  static const ExperimentConfig cfg = ExperimentConfig::full();
  return cfg;
}

const Dataset& full_dataset() {
  static const Dataset ds = [] {
    const auto& cfg = full_config();
    return build_dataset(solve_fdm(cfg.domain, cfg.source, cfg.fine_grid(), cfg.boundary), cfg.dataset);
  }();
  return ds;
}

}  // namespace

TEST(Coarsen, FactorOneIsIdentity) {
  const PressureField f = small_field();
  const PressureField c = coarsen(f, 1);
  EXPECT_TRUE((c.values.array() == f.values.array()).all());
  EXPECT_DOUBLE_EQ(c.grid.dt, f.grid.dt);
  EXPECT_DOUBLE_EQ(c.grid.dx, f.grid.dx);
}

TEST(Coarsen, ComposesOnAlignedGrids) {
  const PressureField f = small_field();
  const PressureField twice = coarsen(coarsen(f, 2), 2);
  const PressureField once = coarsen(f, 4);
  ASSERT_EQ(twice.values.rows(), once.values.rows());
  ASSERT_EQ(twice.values.cols(), once.values.cols());
  EXPECT_TRUE((twice.values.array() == once.values.array()).all());
  EXPECT_NEAR(twice.grid.dt, once.grid.dt, 1e-15 * once.grid.dt);
}

TEST(Coarsen, SamplesEveryFactorthLine) {
  const PressureField f = ramp_field(33, 17);
  const PressureField c = coarsen(f, 4);
  ASSERT_EQ(c.nt(), 9u);
  ASSERT_EQ(c.nx(), 5u);
  for (std::size_t i = 0; i < c.nt(); ++i)
    for (std::size_t j = 0; j < c.nx(); ++j) EXPECT_EQ(c.values(i, j), 1000.0 * (4 * i) + 4 * j);
  EXPECT_DOUBLE_EQ(c.grid.dt, 4 * f.grid.dt);
}

TEST(Coarsen, RejectsNonDivisibleFactorWithoutInterpolation) {
  EXPECT_THROW(coarsen(ramp_field(30, 17), 4), ConfigError);
  EXPECT_THROW(coarsen(ramp_field(33, 18), 4), ConfigError);
}

TEST(Coarsen, InterpolationIsExactOnBilinearData) {
  // A bilinear field is reproduced exactly by bilinear interpolation.
  const PressureField f = ramp_field(31, 18);
  const PressureField c = coarsen(f, 4, true);
  const double st = 30.0 / static_cast<double>(c.nt() - 1);
  const double sx = 17.0 / static_cast<double>(c.nx() - 1);
  for (std::size_t i = 0; i < c.nt(); ++i)
    for (std::size_t j = 0; j < c.nx(); ++j) EXPECT_NEAR(c.values(i, j), 1000.0 * st * i + sx * j, 1e-9);
  EXPECT_NEAR(c.grid.dt * (c.nt() - 1), f.grid.dt * 30, 1e-15);
}

TEST(Coarsen, FullFineMeshMapsToMlMesh) {
  const auto& cfg = full_config();
  const GridSpec fine = cfg.fine_grid();
  EXPECT_EQ(fine.nx, 1009u);
  EXPECT_EQ(fine.nt, 3185u);
  const Dataset& ds = full_dataset();
  EXPECT_EQ(ds.ml_field.nx(), cfg.ml_nx);
  EXPECT_EQ(ds.ml_field.nt(), cfg.ml_nt);
  EXPECT_NEAR(ds.ml_field.grid.dt / cfg.domain.period(), 0.0127, 1e-12);
}

TEST(Windows, MinimumLengthGivesOnePair) {
  const PressureField f = ramp_field(18, 5);
  const auto pairs = make_windows(f, WindowConfig{9, 1}, NormalizationSpec{});
  EXPECT_EQ(pairs.size(), 1u);
}

TEST(Windows, TooShortFieldIsRejected) {
  EXPECT_THROW(make_windows(ramp_field(17, 5), WindowConfig{9, 1}, NormalizationSpec{}), ConfigError);
}

TEST(Windows, CountMatchesFormula) {
  for (std::size_t nt : {18u, 19u, 40u, 126u})
    for (std::size_t stride : {1u, 2u, 5u, 9u}) {
      const auto pairs = make_windows(ramp_field(nt, 3), WindowConfig{9, stride}, NormalizationSpec{});
      EXPECT_EQ(pairs.size(), (nt - 18) / stride + 1) << nt << " " << stride;
    }
}

TEST(Windows, TargetFollowsInputAndIsNormalized) {
  const PressureField f = small_field();
  const NormalizationSpec norm{2.5};
  const WindowConfig w{9, 3};
  const auto pairs = make_windows(f, w, norm);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    ASSERT_EQ(p.origin_step, k * w.stride);
    for (Eigen::Index r = 0; r < 9; ++r) {
      for (Eigen::Index j = 0; j < f.values.cols(); ++j) {
        EXPECT_EQ(p.input(r, j), f.values(static_cast<Eigen::Index>(p.origin_step) + r, j) / 2.5);
        EXPECT_EQ(p.target(r, j), f.values(static_cast<Eigen::Index>(p.origin_step + 9) + r, j) / 2.5);
      }
    }
    EXPECT_DOUBLE_EQ(p.origin_time, f.grid.t(p.origin_step) / f.domain.period());
  }
}

TEST(Windows, ExtractionIsDeterministic) {
  const PressureField f = small_field();
  const auto a = make_windows(f, WindowConfig{9, 2}, NormalizationSpec{1.7});
  const auto b = make_windows(f, WindowConfig{9, 2}, NormalizationSpec{1.7});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].origin_step, b[k].origin_step);
    EXPECT_TRUE((a[k].input.array() == b[k].input.array()).all());
    EXPECT_TRUE((a[k].target.array() == b[k].target.array()).all());
  }
}

TEST(Windows, RejectsInvalidConfig) {
  EXPECT_THROW((WindowConfig{1, 1}.validate()), ConfigError);
  EXPECT_THROW((WindowConfig{9, 0}.validate()), ConfigError);
  EXPECT_THROW((NormalizationSpec{0.0}.validate()), ConfigError);
}

TEST(Normalization, RoundTripsToMachinePrecision) {
  const NormalizationSpec norm{0.7310585786300049};
  for (double v : {0.0, 1.0, -3.25, 1e-12, 12345.678, -9.87e5}) {
    EXPECT_NEAR(norm.denormalize(norm.normalize(v)), v, 2.0 * std::numeric_limits<double>::epsilon() * std::abs(v));
  }
}

TEST(Split, EmptySelectorPutsEverythingInTrain) {
  const auto pairs = make_windows(ramp_field(60, 3), WindowConfig{9, 9}, NormalizationSpec{});
  const Split s = split(pairs, {});
  EXPECT_EQ(s.train.size(), pairs.size());
  EXPECT_TRUE(s.test.empty());
}

TEST(Split, IsAPartition) {
  const auto pairs = make_windows(ramp_field(120, 3), WindowConfig{9, 18}, NormalizationSpec{});
  const Split s = split(pairs, {5, 0});
  EXPECT_EQ(s.train.size() + s.test.size(), pairs.size());
  std::vector<int> seen(pairs.size(), 0);
  for (auto k : s.train_indices) ++seen[k];
  for (auto k : s.test_indices) ++seen[k];
  for (int n : seen) EXPECT_EQ(n, 1);
}

TEST(Split, RejectsLeakageAndBadSelectors) {
  // Stride 1 windows overlap their neighbours.
  const auto pairs = make_windows(ramp_field(40, 3), WindowConfig{9, 1}, NormalizationSpec{});
  EXPECT_THROW(split(pairs, {5}), ConfigError);
  EXPECT_THROW(split(pairs, {pairs.size()}), ConfigError);
  const auto apart = make_windows(ramp_field(60, 3), WindowConfig{9, 18}, NormalizationSpec{});
  EXPECT_THROW(split(apart, {1, 1}), ConfigError);
}

TEST(FullDataset, ThirteenTrainingPairsAndTwoTestCases) {
  const Dataset& ds = full_dataset();
  EXPECT_EQ(ds.train_indices.size(), 13u);
  ASSERT_EQ(ds.test_indices.size(), 2u);
  EXPECT_EQ(ds.test_names[0], "case1_interference");
  EXPECT_EQ(ds.test_names[1], "case2_reflection");
}

TEST(FullDataset, TestInputsEndAtTheirCaseTimes) {
  const Dataset& ds = full_dataset();
  const auto test = ds.test();
  const double step = 0.0127;
  EXPECT_NEAR(test[0].origin_time + 8 * step, 2.37, step / 2);
  EXPECT_NEAR(test[1].origin_time + 8 * step, 1.87, step / 2);
}

TEST(FullDataset, NoTestTargetOverlapsTraining) {
  const Dataset& ds = full_dataset();
  const std::size_t tx = ds.window.tx;
  for (const auto& t : ds.test()) {
    for (const auto& r : ds.train()) {
      const bool disjoint = t.origin_step + tx >= r.origin_step + 2 * tx || r.origin_step >= t.origin_step + 2 * tx;
      EXPECT_TRUE(disjoint) << t.origin_step << " vs " << r.origin_step;
    }
  }
}

TEST(FullDataset, NormalizedByTrainingPeak) {
  const Dataset& ds = full_dataset();
  double peak = 0.0;
  for (const auto& p : ds.train()) peak = std::max({peak, p.input.cwiseAbs().maxCoeff(), p.target.cwiseAbs().maxCoeff()});
  EXPECT_NEAR(peak, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(ds.norm.p0, ds.ml_field.values.topRows(126).cwiseAbs().maxCoeff());
}

TEST(FullDataset, PersistenceRoundTrip) {
  const Dataset& ds = full_dataset();
  const auto dir = std::filesystem::temp_directory_path() / "waveforge_test_dataset_rt";
  std::filesystem::remove_all(dir);
  save_dataset(dir, ds);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.norm.p0, ds.norm.p0);
  EXPECT_EQ(back.train_indices, ds.train_indices);
  EXPECT_EQ(back.test_indices, ds.test_indices);
  EXPECT_EQ(back.test_names, ds.test_names);
  ASSERT_EQ(back.pairs.size(), ds.pairs.size());
  for (std::size_t k = 0; k < ds.pairs.size(); ++k) {
    EXPECT_EQ(back.pairs[k].origin_step, ds.pairs[k].origin_step);
    EXPECT_TRUE((back.pairs[k].input.array() == ds.pairs[k].input.array()).all());
    EXPECT_TRUE((back.pairs[k].target.array() == ds.pairs[k].target.array()).all());
  }
  EXPECT_TRUE((back.ml_field.values.array() == ds.ml_field.values.array()).all());
  std::filesystem::remove_all(dir);
}
