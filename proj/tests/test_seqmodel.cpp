#include "waveforge/io.hpp"
#include "waveforge/seqmodel.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace waveforge;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(gen);
  return m;
}

ModelParams random_params(Eigen::Index nx, std::vector<Eigen::Index> hidden, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  ModelParams p;
  Eigen::Index in = nx;
  for (auto h : hidden) {
    p.layers.push_back({random_matrix(4 * h, in, gen), random_matrix(4 * h, h, gen), random_matrix(4 * h, 1, gen)});
    in = h;
  }
  p.head_W = random_matrix(nx, in, gen);
  p.head_b = random_matrix(nx, 1, gen);
  return p;
}

Grid random_window(Eigen::Index tx, Eigen::Index nx, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return random_matrix(tx, nx, gen, 1.0);
}

// Scalar-by-scalar LSTM reference, independent of the matrix implementation.
struct RefCell {
  std::vector<double> h, c;
};

double ref_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void ref_step(const LayerParams& L, const std::vector<double>& x, RefCell& s) {
  const std::size_t H = s.h.size();
  std::vector<double> z(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double acc = L.b(static_cast<Eigen::Index>(r));
    for (std::size_t k = 0; k < x.size(); ++k) acc += L.W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * x[k];
    for (std::size_t k = 0; k < H; ++k) acc += L.U(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * s.h[k];
    z[r] = acc;
  }
  for (std::size_t k = 0; k < H; ++k) {
    const double i = ref_sigmoid(z[k]);
    const double f = ref_sigmoid(z[H + k]);
    const double g = std::tanh(z[2 * H + k]);
    const double o = ref_sigmoid(z[3 * H + k]);
    s.c[k] = f * s.c[k] + i * g;
    s.h[k] = o * std::tanh(s.c[k]);
  }
}

std::vector<double> ref_head(const ModelParams& p, const std::vector<double>& h) {
  std::vector<double> y(static_cast<std::size_t>(p.state_size()));
  for (std::size_t r = 0; r < y.size(); ++r) {
    double acc = p.head_b(static_cast<Eigen::Index>(r));
    for (std::size_t k = 0; k < h.size(); ++k) acc += p.head_W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * h[k];
    y[r] = acc;
  }
  return y;
}

// Stateful recursive rollout computed with the scalar reference.
std::vector<std::vector<double>> ref_rollout(const ModelParams& p, const Grid& input) {
  std::vector<RefCell> cells;
  for (const auto& l : p.layers) cells.push_back({std::vector<double>(l.hidden(), 0.0), std::vector<double>(l.hidden(), 0.0)});
  auto feed = [&](std::vector<double> x) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      ref_step(p.layers[l], x, cells[l]);
      x = cells[l].h;
    }
    return ref_head(p, x);
  };
  const auto tx = static_cast<std::size_t>(input.rows());
  std::vector<std::vector<double>> preds;
  std::vector<double> last;
  for (std::size_t k = 0; k < tx; ++k) {
    std::vector<double> x(input.cols());
    for (Eigen::Index j = 0; j < input.cols(); ++j) x[static_cast<std::size_t>(j)] = input(static_cast<Eigen::Index>(k), j);
    last = feed(x);
  }
  preds.push_back(last);
  while (preds.size() < tx) preds.push_back(feed(preds.back()));
  return preds;
}

}  // namespace

TEST(Cell, ZeroParamsAndStateGiveZeroOutput) {
  ModelParams p = random_params(5, {4}, 1);
  p.layers[0].W.setZero();
  p.layers[0].U.setZero();
  p.layers[0].b.setZero();
  CellState s = CellState::zeros(p, 1);
  const CellTape t = cell_step(p, 0, Matrix::Ones(5, 1), s);
  EXPECT_EQ(t.h.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(t.c.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Cell, SaturatedGatesKeepCellState) {
  ModelParams p = random_params(3, {4}, 2);
  auto& L = p.layers[0];
  L.W.setZero();
  L.U.setZero();
  L.b.setZero();
  L.b.segment(0, 4).setConstant(-1e3);  // input gate closed
  L.b.segment(4, 4).setConstant(1e3);   // forget gate open
  CellState s = CellState::zeros(p, 1);
  s.c[0] << 0.3, -1.2, 2.0, 0.0;
  const Matrix c0 = s.c[0];
  std::mt19937_64 gen(3);
  for (int k = 0; k < 5; ++k) cell_step(p, 0, random_matrix(3, 1, gen, 1.0), s);
  EXPECT_TRUE((s.c[0].array() == c0.array()).all());
}

TEST(Cell, MatchesScalarReference) {
  const ModelParams p = random_params(6, {5}, 3);
  std::mt19937_64 gen(4);
  CellState s = CellState::zeros(p, 1);
  RefCell ref{std::vector<double>(5, 0.0), std::vector<double>(5, 0.0)};
  for (int step = 0; step < 4; ++step) {
    const Matrix x = random_matrix(6, 1, gen, 1.0);
    cell_step(p, 0, x, s);
    ref_step(p.layers[0], std::vector<double>(x.data(), x.data() + 6), ref);
    for (int k = 0; k < 5; ++k) {
      EXPECT_NEAR(s.h[0](k, 0), ref.h[static_cast<std::size_t>(k)], 1e-14);
      EXPECT_NEAR(s.c[0](k, 0), ref.c[static_cast<std::size_t>(k)], 1e-14);
    }
  }
}

TEST(Cell, GatesStayBounded) {
  ModelParams p = random_params(8, {6}, 5);
  p.layers[0].W *= 40.0;  // drive the pre-activations hard
  std::mt19937_64 gen(6);
  CellState s = CellState::zeros(p, 3);
  for (int step = 0; step < 10; ++step) {
    const CellTape t = cell_step(p, 0, random_matrix(8, 3, gen, 1.0), s);
    for (const Matrix* m : {&t.i, &t.f, &t.o}) {
      EXPECT_GE(m->minCoeff(), 0.0);
      EXPECT_LE(m->maxCoeff(), 1.0);
    }
    EXPECT_GE(t.g.minCoeff(), -1.0);
    EXPECT_LE(t.g.maxCoeff(), 1.0);
    EXPECT_LT(t.h.cwiseAbs().maxCoeff(), 1.0 + 1e-15);
  }
}

TEST(Cell, RejectsShapeMismatch) {
  const ModelParams p = random_params(6, {5}, 7);
  CellState s = CellState::zeros(p, 1);
  EXPECT_THROW(cell_step(p, 0, Matrix::Zero(5, 1), s), ConfigError);
  EXPECT_THROW(cell_step(p, 1, Matrix::Zero(6, 1), s), ConfigError);
  CellState wrong = CellState::zeros(p, 2);
  EXPECT_THROW(cell_step(p, 0, Matrix::Zero(6, 1), wrong), ConfigError);
}

TEST(Model, InitHasDeclaredShapesAndBiases) {
  Architecture a;
  a.state_size = 10;
  a.hidden = {7, 3};
  const ModelParams p = init_params(a, 11);
  ASSERT_EQ(p.layers.size(), 2u);
  EXPECT_EQ(p.layers[0].W.rows(), 28);
  EXPECT_EQ(p.layers[0].W.cols(), 10);
  EXPECT_EQ(p.layers[1].W.cols(), 7);
  EXPECT_EQ(p.head_W.rows(), 10);
  EXPECT_EQ(p.head_W.cols(), 3);
  EXPECT_EQ(p.parameter_count(), static_cast<std::size_t>(p.flatten().size()));
  // Forget-gate bias one, everything else zero.
  EXPECT_TRUE((p.layers[0].b.segment(7, 7).array() == 1.0).all());
  EXPECT_EQ(p.layers[0].b.segment(0, 7).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.layers[0].b.segment(14, 14).cwiseAbs().maxCoeff(), 0.0);
  const double limit = std::sqrt(6.0 / (10.0 + 28.0));
  EXPECT_LE(p.layers[0].W.cwiseAbs().maxCoeff(), limit);
  EXPECT_EQ(p.head_b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Model, InitIsSeedDeterministic) {
  Architecture a;
  a.state_size = 8;
  a.hidden = {5};
  EXPECT_TRUE((init_params(a, 3).flatten().array() == init_params(a, 3).flatten().array()).all());
  EXPECT_FALSE((init_params(a, 3).flatten().array() == init_params(a, 4).flatten().array()).all());
}

TEST(Model, FlattenAssignRoundTrip) {
  const ModelParams p = random_params(6, {5, 4}, 8);
  ModelParams q = random_params(6, {5, 4}, 9);
  q.assign(p.flatten());
  EXPECT_TRUE((q.flatten().array() == p.flatten().array()).all());
}

TEST(Forward, OutputShapeIsTxByNx) {
  const ModelParams p = random_params(6, {5}, 10);
  const WindowOutput out = forward_window(p, random_window(9, 6, 11));
  EXPECT_EQ(out.outputs.rows(), 9);
  EXPECT_EQ(out.outputs.cols(), 6);
  ASSERT_EQ(out.final_state.h.size(), 1u);
  EXPECT_EQ(out.final_state.h[0].rows(), 5);
}

TEST(Forward, SameInputGivesIdenticalOutput) {
  const ModelParams p = random_params(6, {5, 3}, 12);
  const Grid x = random_window(9, 6, 13);
  EXPECT_TRUE((forward_window(p, x).outputs.array() == forward_window(p, x).outputs.array()).all());
}

TEST(Forward, RejectsWrongStateSize) {
  const ModelParams p = random_params(6, {5}, 14);
  EXPECT_THROW(forward_window(p, random_window(9, 7, 15)), ConfigError);
}

TEST(Forward, NonFiniteActivationIsReported) {
  ModelParams p = random_params(6, {5}, 16);
  p.layers[0].W(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(forward_window(p, random_window(3, 6, 17)), NumericError);
}

TEST(Rollout, MatchesScalarReference) {
  const ModelParams p = random_params(6, {5, 4}, 18);
  const Grid x = random_window(9, 6, 19);
  const Grid y = rollout_recursive(p, x);
  const auto ref = ref_rollout(p, x);
  ASSERT_EQ(y.rows(), 9);
  for (Eigen::Index k = 0; k < 9; ++k)
    for (Eigen::Index j = 0; j < 6; ++j) EXPECT_NEAR(y(k, j), ref[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)], 1e-12);
}

TEST(Rollout, SingleStepEqualsForward) {
  const ModelParams p = random_params(6, {5}, 20);
  const Grid x = random_window(1, 6, 21);
  EXPECT_TRUE((rollout_recursive(p, x).array() == forward_window(p, x).outputs.array()).all());
  EXPECT_TRUE((rollout_recursive(p, x, false).array() == forward_window(p, x).outputs.array()).all());
}

TEST(Rollout, FirstPredictionIsLastWindowOutput) {
  const ModelParams p = random_params(6, {5}, 22);
  const Grid x = random_window(9, 6, 23);
  EXPECT_TRUE((rollout_recursive(p, x).row(0).array() == forward_window(p, x).outputs.row(8).array()).all());
}

TEST(Rollout, FeedsBackExactlyTheReportedPredictions) {
  // Drive the cells by hand, feeding the reported predictions back in, and
  // compare against the library rollout.
  const ModelParams p = random_params(6, {5, 4}, 24);
  const Grid x = random_window(9, 6, 25);
  const Grid y = rollout_recursive(p, x);
  CellState s = CellState::zeros(p, 1);
  auto feed = [&](const Matrix& in) {
    Matrix h = in;
    for (std::size_t l = 0; l < p.layers.size(); ++l) h = cell_step(p, l, h, s).h;
    Matrix out = p.head_W * h;
    out.colwise() += p.head_b;
    return out;
  };
  Matrix out;
  for (Eigen::Index k = 0; k < 9; ++k) out = feed(x.row(k).transpose());
  EXPECT_TRUE((out.transpose().array() == y.row(0).array()).all());
  for (Eigen::Index k = 1; k < 9; ++k) {
    // The k-th iteration's newest input is the reported prediction k - 1.
    out = feed(y.row(k - 1).transpose());
    EXPECT_TRUE((out.transpose().array() == y.row(k).array()).all()) << k;
  }
}

TEST(Rollout, StatelessVariantRestartsEveryIteration) {
  const ModelParams p = random_params(6, {5}, 26);
  const Grid x = random_window(4, 6, 27);
  const Grid y = rollout_recursive(p, x, false);
  Grid window = x;
  for (Eigen::Index k = 0; k < 4; ++k) {
    const Grid out = forward_window(p, window).outputs;
    EXPECT_TRUE((out.row(3).array() == y.row(k).array()).all()) << k;
    Grid next(4, 6);
    next.topRows(3) = window.bottomRows(3);
    next.row(3) = y.row(k);
    window = next;
  }
}

TEST(Rollout, IsDeterministic) {
  const ModelParams p = random_params(6, {5, 4}, 28);
  const Grid x = random_window(9, 6, 29);
  EXPECT_TRUE((rollout_recursive(p, x).array() == rollout_recursive(p, x).array()).all());
}

TEST(Golden, StoredCheckpointReproducesStoredRollouts) {
  const fs::path dir = WAVEFORGE_TEST_DATA;
  const json meta = read_json(dir / "golden.json");
  const Checkpoint ck = load_checkpoint(dir / "golden.wfck");
  const auto tx = meta.at("tx").get<std::size_t>();
  const auto nx = meta.at("nx").get<std::size_t>();
  ASSERT_EQ(static_cast<std::size_t>(ck.params.state_size()), nx);
  for (const auto& name : meta.at("cases")) {
    const std::string n = name.get<std::string>();
    const Grid input = read_grid(dir / ("golden_" + n + "_input.bin"), tx, nx);
    const Grid expected = read_grid(dir / ("golden_" + n + "_rollout.bin"), tx, nx);
    EXPECT_TRUE((rollout_recursive(ck.params, input).array() == expected.array()).all()) << n;
  }
}
