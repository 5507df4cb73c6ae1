#pragma once

// Loss = 1/2 mean (p_hat - p)^2 + (lambda / p0)^2 mean_w mean_cells (c_hat / c - 1)^2
//
// with c = |p_t / p_x| from the target block and c_hat from the predicted
// block, both differentiated with the last input state prepended as the
// temporal boundary ring. Only cells unmasked in the target take part, and
// predicted cells whose |p_x| falls below the floor are dropped for that
// evaluation. Fields are normalized by p0, so lambda (pressure units) enters
// as lambda / p0.

#include "waveforge/core.hpp"
#include "waveforge/dataset.hpp"
#include "waveforge/kinematics.hpp"
#include "waveforge/seqmodel.hpp"
#include "waveforge/stencil.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

namespace waveforge {

struct RegularizerConfig {
  double lambda = 0.0;  // pressure units
  MaskThresholds thresholds;

  void validate() const {
    require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be non-negative");
    thresholds.validate();
  }
};

struct OptimizerSchedule {
  double learning_rate = 5e-4;
  double decay = 0.9;
  std::size_t decay_epochs = 1000;
  std::size_t epochs = 3500;
  std::vector<std::size_t> checkpoints = {2750, 3500};
  std::size_t batch_size = 0;  // 0: full batch
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Staircase decay lr0 * decay^floor(epoch / decay_epochs).
  double rate_at(std::size_t epoch) const {
    return learning_rate * std::pow(decay, static_cast<double>(epoch / decay_epochs));
  }

  void validate() const {
    require(learning_rate > 0.0 && decay > 0.0, "learning rate and decay must be positive");
    require(decay_epochs > 0 && epochs > 0, "epoch counts must be positive");
    for (auto c : checkpoints) require(c >= 1 && c <= epochs, "checkpoint epoch outside the schedule");
  }
};

struct LossBreakdown {
  double mse = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// Target-side wave speeds of one window, cached for the whole run.
struct TargetKinematics {
  Grid speed;     // Tx x nx, valid where mask is true
  BoolGrid mask;  // Tx x nx
};

/// Stacks the ring row on top of a Tx-row block.
inline Grid with_ring(const Eigen::Ref<const Eigen::RowVectorXd>& ring, const Grid& block) {
  Grid out(block.rows() + 1, block.cols());
  out.row(0) = ring;
  out.bottomRows(block.rows()) = block;
  return out;
}

/// Thresholds as applied to p0-normalized windows.
inline MaskThresholds normalized_thresholds(MaskThresholds th) {
  th.reference_amplitude = 1.0;
  return th;
}

inline TargetKinematics target_kinematics(const SequencePair& pair, double dt, double dx,
                                          const MaskThresholds& th) {
  const Grid block = with_ring(pair.input.row(pair.input.rows() - 1), pair.target);
  const KinematicState ks = classify(block, dt, dx, normalized_thresholds(th));
  TargetKinematics tk;
  const Eigen::Index tx = pair.target.rows();
  tk.mask = ks.mask().bottomRows(tx);
  tk.speed = Grid::Zero(tx, pair.target.cols());
  for (Eigen::Index i = 0; i < tx; ++i)
    for (Eigen::Index j = 0; j < tk.speed.cols(); ++j)
      if (tk.mask(i, j)) tk.speed(i, j) = std::abs(ks.dpdt(i + 1, j) / ks.dpdx(i + 1, j));
  return tk;
}

struct Batch {
  std::vector<const SequencePair*> pairs;
  std::vector<const TargetKinematics*> kin;
};

struct LossContext {
  double dt = 1.0;  // ML mesh spacings
  double dx = 1.0;
  double p0 = 1.0;
  bool stateful = true;
  RegularizerConfig reg;

  double weight() const { return (reg.lambda / p0) * (reg.lambda / p0); }
  double floor_x() const { return reg.thresholds.floor / dx; }
};

struct Evaluation {
  LossBreakdown loss;
  ModelParams grad;  // empty unless requested
};

namespace detail {

// Per-window regularizer value and, optionally, its cotangent on the
// predicted block.
inline double window_regularizer(const Grid& ring_pred, const TargetKinematics& tk, double dt,
                                 double dx, double floor_x, Grid* d_pred) {
  const Grid a = derivative(ring_pred, Axis::time, dt);
  const Grid d = derivative(ring_pred, Axis::space, dx);
  const Eigen::Index tx = tk.mask.rows();
  const Eigen::Index nx = tk.mask.cols();
  std::size_t used = 0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < tx; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      if (!tk.mask(i, j) || std::abs(d(i + 1, j)) < floor_x) continue;
      const double r = std::abs(a(i + 1, j)) / std::abs(d(i + 1, j)) / tk.speed(i, j) - 1.0;
      sum += r * r;
      ++used;
    }
  }
  if (used == 0) {
    if (d_pred) d_pred->setZero(tx, nx);
    return 0.0;
  }
  const double inv = 1.0 / static_cast<double>(used);
  if (d_pred) {
    Grid da = Grid::Zero(tx + 1, nx);
    Grid dd = Grid::Zero(tx + 1, nx);
    for (Eigen::Index i = 0; i < tx; ++i) {
      for (Eigen::Index j = 0; j < nx; ++j) {
        const double den = d(i + 1, j);
        if (!tk.mask(i, j) || std::abs(den) < floor_x) continue;
        const double num = a(i + 1, j);
        const double c = tk.speed(i, j);
        const double r = std::abs(num) / std::abs(den) / c - 1.0;
        const double coef = 2.0 * r * inv / c;
        da(i + 1, j) = coef * (num > 0.0 ? 1.0 : (num < 0.0 ? -1.0 : 0.0)) / std::abs(den);
        dd(i + 1, j) = -coef * std::abs(num) / (den * std::abs(den));
      }
    }
    const Grid full = derivative_adjoint(da, Axis::time, dt) + derivative_adjoint(dd, Axis::space, dx);
    *d_pred = full.bottomRows(tx);
  }
  return sum * inv;
}

}  // namespace detail

/// Loss (and gradient when `want_grad`) on one batch.
inline Evaluation evaluate(const ModelParams& params, const Batch& batch, const LossContext& ctx,
                           bool want_grad) {
  ctx.reg.validate();
  require(!batch.pairs.empty() && batch.pairs.size() == batch.kin.size(), "malformed batch");
  std::vector<const Grid*> inputs;
  for (const auto* p : batch.pairs) inputs.push_back(&p->input);
  const std::vector<Matrix> x = batch_states(inputs);
  const auto tx = x.size();
  const Eigen::Index nx = x.front().rows();
  const auto nb = static_cast<Eigen::Index>(batch.pairs.size());

  const ForwardTape tape = run_forward(params, x, rollout_plan(tx, ctx.stateful), want_grad);

  Evaluation ev;
  const double cells = static_cast<double>(tx) * static_cast<double>(nx) * static_cast<double>(nb);
  std::vector<Matrix> d_out(tx, Matrix::Zero(nx, nb));
  double sq = 0.0;
  for (std::size_t k = 0; k < tx; ++k) {
    Matrix target(nx, nb);
    for (Eigen::Index b = 0; b < nb; ++b) target.col(b) = batch.pairs[static_cast<std::size_t>(b)]->target.row(static_cast<Eigen::Index>(k)).transpose();
    const Matrix diff = tape.outputs[k] - target;
    sq += diff.squaredNorm();
    if (want_grad) d_out[k] = diff / cells;
  }
  ev.loss.mse = 0.5 * sq / cells;

  const double w = ctx.weight();
  if (w > 0.0) {
    double reg = 0.0;
    for (Eigen::Index b = 0; b < nb; ++b) {
      const SequencePair& pair = *batch.pairs[static_cast<std::size_t>(b)];
      const Grid pred = unbatch(tape.outputs, b);
      const Grid ring_pred = with_ring(pair.input.row(pair.input.rows() - 1), pred);
      Grid d_pred;
      reg += detail::window_regularizer(ring_pred, *batch.kin[static_cast<std::size_t>(b)], ctx.dt, ctx.dx,
                                        ctx.floor_x(), want_grad ? &d_pred : nullptr);
      if (want_grad) {
        const double scale = w / static_cast<double>(nb);
        for (std::size_t k = 0; k < tx; ++k) d_out[k].col(b) += scale * d_pred.row(static_cast<Eigen::Index>(k)).transpose();
      }
    }
    ev.loss.reg = w * reg / static_cast<double>(nb);
  }
  ev.loss.total = ev.loss.mse + ev.loss.reg;
  if (!std::isfinite(ev.loss.total)) throw NumericError("non-finite loss");

  if (want_grad) {
    ev.grad = run_backward(params, tape, std::move(d_out));
    std::size_t k = 0;
    bool bad = false;
    ModelParams::visit(ev.grad, [&](const std::string&, const double* p, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n && !bad; ++i, ++k) bad = !std::isfinite(p[i]);
    });
    if (bad) throw NumericError("non-finite gradient at " + params.describe(k - 1));
  }
  return ev;
}

/// Training-set problem: windows plus their cached target kinematics.
struct Problem {
  std::vector<SequencePair> windows;
  std::vector<TargetKinematics> kin;
  LossContext ctx;

  Problem(std::vector<SequencePair> w, LossContext c) : windows(std::move(w)), ctx(std::move(c)) {
    for (const auto& p : windows) kin.push_back(target_kinematics(p, ctx.dt, ctx.dx, ctx.reg.thresholds));
  }

  Batch batch(const std::vector<std::size_t>& idx) const {
    Batch b;
    for (auto k : idx) {
      b.pairs.push_back(&windows.at(k));
      b.kin.push_back(&kin.at(k));
    }
    return b;
  }

  Batch all() const {
    std::vector<std::size_t> idx(windows.size());
    std::iota(idx.begin(), idx.end(), 0);
    return batch(idx);
  }
};

inline LossBreakdown loss(const ModelParams& params, const Problem& problem) {
  return evaluate(params, problem.all(), problem.ctx, false).loss;
}

inline ModelParams grad(const ModelParams& params, const Problem& problem) {
  return evaluate(params, problem.all(), problem.ctx, true).grad;
}

class Adam {
 public:
  Adam(std::size_t n, const OptimizerSchedule& s)
      : m_(Vector::Zero(static_cast<Eigen::Index>(n))), v_(Vector::Zero(static_cast<Eigen::Index>(n))), s_(s) {}

  void step(Vector& theta, const Vector& g, double lr) {
    ++t_;
    m_ = s_.beta1 * m_ + (1.0 - s_.beta1) * g;
    v_ = s_.beta2 * v_ + (1.0 - s_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    theta.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + s_.epsilon);
  }

 private:
  Vector m_, v_;
  OptimizerSchedule s_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based: metrics of the pass that produced this epoch's update
  double lr = 0.0;
  LossBreakdown loss;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  std::map<std::size_t, ModelParams> checkpoints;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&, const ModelParams&)>;

/// Adam over `problem` from `init`. Mini-batches (batch_size > 0) are drawn
/// from a shuffle seeded by the schedule; full batches keep window order.
inline TrainResult train(const Problem& problem, ModelParams init, const OptimizerSchedule& sched,
                         const EpochCallback& on_epoch = {}) {
  sched.validate();
  require(!problem.windows.empty(), "no training windows");
  TrainResult res;
  res.params = std::move(init);
  Vector theta = res.params.flatten();
  Adam adam(static_cast<std::size_t>(theta.size()), sched);
  Rng shuffle(sched.seed ^ 0x9e3779b97f4a7c15ULL);

  const std::size_t n = problem.windows.size();
  const std::size_t bs = sched.batch_size == 0 ? n : std::min(sched.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t e = 0; e < sched.epochs; ++e) {
    if (bs < n) {
      for (std::size_t k = n - 1; k > 0; --k) std::swap(order[k], order[shuffle.next() % (k + 1)]);
    }
    const double lr = sched.rate_at(e);
    EpochRecord rec{e + 1, lr, {}};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, n)));
      const Evaluation ev = evaluate(res.params, problem.batch(idx), problem.ctx, true);
      adam.step(theta, ev.grad.flatten(), lr);
      res.params.assign(theta);
      rec.loss.mse += ev.loss.mse;
      rec.loss.reg += ev.loss.reg;
      rec.loss.total += ev.loss.total;
      ++batches;
    }
    rec.loss.mse /= static_cast<double>(batches);
    rec.loss.reg /= static_cast<double>(batches);
    rec.loss.total /= static_cast<double>(batches);
    if (!res.params.all_finite()) throw NumericError("parameters diverged at epoch " + std::to_string(e + 1));
    res.history.push_back(rec);
    if (std::find(sched.checkpoints.begin(), sched.checkpoints.end(), e + 1) != sched.checkpoints.end()) {
      res.checkpoints.emplace(e + 1, res.params);
    }
    if (on_epoch && !on_epoch(rec, res.params)) break;
  }
  return res;
}

}  // namespace waveforge
