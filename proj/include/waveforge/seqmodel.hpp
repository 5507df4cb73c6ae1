#pragma once

// Stacked LSTM with a linear output layer, run recursively: after consuming
// the Tx input states, each prediction is fed back as the next input until Tx
// new states have been produced.
//
// Everything is batched column-wise: a state is an (nx x B) matrix holding B
// windows side by side.

#include "waveforge/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace waveforge {

struct Architecture {
  std::size_t state_size = 64;                 // nx of the ML mesh
  std::vector<std::size_t> hidden = {128, 128};  // one entry per stacked layer
  bool stateful = true;

  void validate() const {
    require(state_size >= 1, "state size must be positive");
    require(!hidden.empty(), "at least one LSTM layer is required");
    for (auto h : hidden) require(h >= 1, "hidden sizes must be positive");
  }
};

/// Gate blocks are stacked as [input; forget; candidate; output].
struct LayerParams {
  Matrix W;  // 4H x in
  Matrix U;  // 4H x H
  Vector b;  // 4H

  Eigen::Index hidden() const { return U.cols(); }
};

struct ModelParams {
  std::vector<LayerParams> layers;
  Matrix head_W;  // nx x H_top
  Vector head_b;  // nx

  Eigen::Index state_size() const { return head_W.rows(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.W.size() + l.U.size() + l.b.size();
    return n + head_W.size() + head_b.size();
  }

  /// Visits every parameter block in a fixed order (layer W, U, b..., head W, b).
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      fn(p + "W", self.layers[l].W.data(), self.layers[l].W.size());
      fn(p + "U", self.layers[l].U.data(), self.layers[l].U.size());
      fn(p + "b", self.layers[l].b.data(), self.layers[l].b.size());
    }
    fn(std::string("head.W"), self.head_W.data(), self.head_W.size());
    fn(std::string("head.b"), self.head_b.data(), self.head_b.size());
  }

  Vector flatten() const {
    Vector out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index at = 0;
    visit(*this, [&](const std::string&, const double* p, Eigen::Index n) {
      out.segment(at, n) = Eigen::Map<const Vector>(p, n);
      at += n;
    });
    return out;
  }

  void assign(const Vector& flat) {
    require(static_cast<std::size_t>(flat.size()) == parameter_count(), "flat parameter size mismatch");
    Eigen::Index at = 0;
    visit(*this, [&](const std::string&, double* p, Eigen::Index n) {
      Eigen::Map<Vector>(p, n) = flat.segment(at, n);
      at += n;
    });
  }

  /// Name of the block and offset holding flat index `k`, for diagnostics.
  std::string describe(std::size_t k) const {
    std::string out;
    std::size_t at = 0;
    visit(*this, [&](const std::string& name, const double*, Eigen::Index n) {
      const auto un = static_cast<std::size_t>(n);
      if (out.empty() && k < at + un) out = name + "[" + std::to_string(k - at) + "]";
      at += un;
    });
    return out;
  }

  /// Output-gate block of the input and recurrent weights of every layer.
  Vector output_gate_weights() const {
    std::vector<double> vals;
    for (const auto& l : layers) {
      const Eigen::Index h = l.hidden();
      const Matrix w = l.W.middleRows(3 * h, h);
      const Matrix u = l.U.middleRows(3 * h, h);
      vals.insert(vals.end(), w.data(), w.data() + w.size());
      vals.insert(vals.end(), u.data(), u.data() + u.size());
    }
    return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  }

  bool all_finite() const {
    bool ok = true;
    visit(*this, [&](const std::string&, const double* p, Eigen::Index n) {
      ok = ok && Eigen::Map<const Vector>(p, n).allFinite();
    });
    return ok;
  }
};

/// Uniform [0, 1) doubles from a 64-bit Mersenne twister, identical on every
/// standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  std::uint64_t next() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

/// Glorot-uniform weights, zero biases, forget-gate bias 1.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
    return m;
  };
  ModelParams p;
  auto in = static_cast<Eigen::Index>(arch.state_size);
  for (auto hs : arch.hidden) {
    const auto h = static_cast<Eigen::Index>(hs);
    LayerParams l;
    l.W = glorot(4 * h, in, static_cast<double>(in), static_cast<double>(4 * h));
    l.U = glorot(4 * h, h, static_cast<double>(h), static_cast<double>(4 * h));
    l.b = Vector::Zero(4 * h);
    l.b.segment(h, h).setOnes();
    p.layers.push_back(std::move(l));
    in = h;
  }
  const auto nx = static_cast<Eigen::Index>(arch.state_size);
  p.head_W = glorot(nx, in, static_cast<double>(in), static_cast<double>(nx));
  p.head_b = Vector::Zero(nx);
  return p;
}

inline void check_shapes(const ModelParams& p) {
  require(!p.layers.empty(), "model has no layers");
  Eigen::Index in = p.state_size();
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    const Eigen::Index h = L.U.cols();
    require(L.U.rows() == 4 * h && L.W.rows() == 4 * h && L.W.cols() == in && L.b.size() == 4 * h,
            "inconsistent shapes in layer " + std::to_string(l));
    in = h;
  }
  require(p.head_W.cols() == in && p.head_b.size() == p.head_W.rows(), "inconsistent head shapes");
}

/// Per-layer hidden and cell states, one column per batch entry.
struct CellState {
  std::vector<Matrix> h;
  std::vector<Matrix> c;

  static CellState zeros(const ModelParams& p, Eigen::Index batch) {
    CellState s;
    for (const auto& l : p.layers) {
      s.h.push_back(Matrix::Zero(l.hidden(), batch));
      s.c.push_back(Matrix::Zero(l.hidden(), batch));
    }
    return s;
  }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Activations of one LSTM cell update, kept for backpropagation.
struct CellTape {
  Matrix x, h_prev, c_prev;
  Matrix i, f, g, o;
  Matrix c, tanh_c, h;
};

/// One LSTM update of `layer`: gates through sigmoid, candidate through tanh,
/// c' = f * c + i * g, h' = o * tanh(c'). Updates `state` in place.
inline CellTape cell_step(const ModelParams& params, std::size_t layer, const Matrix& x_in,
                          CellState& state) {
  require(layer < params.layers.size(), "layer index out of range");
  const LayerParams& L = params.layers[layer];
  const Eigen::Index h = L.hidden();
  require(x_in.rows() == L.W.cols(), "input size " + std::to_string(x_in.rows()) +
                                         " does not match layer " + std::to_string(layer) +
                                         " (expects " + std::to_string(L.W.cols()) + ")");
  require(state.h.at(layer).rows() == h && state.h[layer].cols() == x_in.cols() &&
              state.c.at(layer).rows() == h && state.c[layer].cols() == x_in.cols(),
          "state shape mismatch in layer " + std::to_string(layer));

  CellTape t;
  t.x = x_in;
  t.h_prev = state.h[layer];
  t.c_prev = state.c[layer];
  Matrix z = L.W * x_in;
  z.noalias() += L.U * t.h_prev;
  z.colwise() += L.b;
  t.i = z.topRows(h).unaryExpr(&sigmoid);
  t.f = z.middleRows(h, h).unaryExpr(&sigmoid);
  t.g = z.middleRows(2 * h, h).array().tanh().matrix();
  t.o = z.bottomRows(h).unaryExpr(&sigmoid);
  t.c = t.f.cwiseProduct(t.c_prev) + t.i.cwiseProduct(t.g);
  t.tanh_c = t.c.array().tanh().matrix();
  t.h = t.o.cwiseProduct(t.tanh_c);
  state.h[layer] = t.h;
  state.c[layer] = t.c;
  return t;
}

/// Where one cell step takes its input from and whether it emits an output.
struct StepPlan {
  int ground_truth = -1;  // index into the input window, or
  int feedback = -1;      // index of an earlier prediction
  int emit = -1;          // prediction index produced by this step, if any
};

/// A sequence of steps started from the zero state.
using RunPlan = std::vector<StepPlan>;
using Plan = std::vector<RunPlan>;

/// Consume the Tx inputs and emit after every step.
inline Plan window_plan(std::size_t tx) {
  RunPlan run;
  for (std::size_t k = 0; k < tx; ++k) run.push_back({static_cast<int>(k), -1, static_cast<int>(k)});
  return {run};
}

/// Recursive rollout. Stateful: one pass of 2 Tx - 1 steps where step Tx + k
/// consumes prediction k. Stateless: Tx passes from the zero state, pass k
/// reading the window (x_{k+1} .. x_Tx, y^1 .. y^k) and emitting y^{k+1}.
inline Plan rollout_plan(std::size_t tx, bool stateful) {
  const int n = static_cast<int>(tx);
  Plan plan;
  if (stateful) {
    RunPlan run;
    for (int s = 0; s < 2 * n - 1; ++s) {
      StepPlan st;
      if (s < n) st.ground_truth = s; else st.feedback = s - n;
      if (s >= n - 1) st.emit = s - (n - 1);
      run.push_back(st);
    }
    plan.push_back(run);
    return plan;
  }
  for (int k = 0; k < n; ++k) {
    RunPlan run;
    for (int m = 0; m < n; ++m) {
      StepPlan st;
      const int pos = k + m;
      if (pos < n) st.ground_truth = pos; else st.feedback = pos - n;
      if (m == n - 1) st.emit = k;
      run.push_back(st);
    }
    plan.push_back(run);
  }
  return plan;
}

struct StepTape {
  std::vector<CellTape> cells;  // one per layer
};

struct ForwardTape {
  Plan plan;
  std::vector<std::vector<StepTape>> runs;
  std::vector<Matrix> outputs;  // nx x B per emitted prediction
};

inline std::size_t plan_outputs(const Plan& plan) {
  std::size_t n = 0;
  for (const auto& run : plan)
    for (const auto& st : run) n += st.emit >= 0;
  return n;
}

/// Executes `plan` on a batch of windows. `inputs[k]` is the k-th input
/// state, nx x B.
inline ForwardTape run_forward(const ModelParams& params, const std::vector<Matrix>& inputs,
                               const Plan& plan, bool keep_tape = true) {
  check_shapes(params);
  require(!inputs.empty(), "empty input window");
  const Eigen::Index batch = inputs.front().cols();
  for (const auto& x : inputs) {
    require(x.rows() == params.state_size() && x.cols() == batch, "input state shape mismatch");
  }
  ForwardTape tape;
  tape.plan = plan;
  tape.outputs.resize(plan_outputs(plan));
  for (std::size_t r = 0; r < plan.size(); ++r) {
    CellState state = CellState::zeros(params, batch);
    std::vector<StepTape> steps;
    for (std::size_t s = 0; s < plan[r].size(); ++s) {
      const StepPlan& st = plan[r][s];
      const Matrix& x = st.ground_truth >= 0 ? inputs.at(static_cast<std::size_t>(st.ground_truth))
                                             : tape.outputs.at(static_cast<std::size_t>(st.feedback));
      require(x.size() > 0, "prediction consumed before it was produced");
      StepTape step;
      const Matrix* layer_in = &x;
      for (std::size_t l = 0; l < params.layers.size(); ++l) {
        step.cells.push_back(cell_step(params, l, *layer_in, state));
        if (!step.cells.back().h.allFinite()) {
          throw NumericError("non-finite activation in pass " + std::to_string(r) + ", step " +
                             std::to_string(s) + ", layer " + std::to_string(l));
        }
        layer_in = &step.cells.back().h;
      }
      if (st.emit >= 0) {
        Matrix y = params.head_W * *layer_in;
        y.colwise() += params.head_b;
        if (!y.allFinite()) {
          throw NumericError("non-finite output in pass " + std::to_string(r) + ", step " + std::to_string(s));
        }
        tape.outputs[static_cast<std::size_t>(st.emit)] = std::move(y);
      }
      if (keep_tape) {
        steps.push_back(std::move(step));
      } else {
        // Only the newest step is ever read again.
        steps.clear();
        steps.push_back(std::move(step));
      }
    }
    if (keep_tape) tape.runs.push_back(std::move(steps));
  }
  return tape;
}

/// Gradient of a scalar loss given its cotangents on every prediction.
inline ModelParams run_backward(const ModelParams& params, const ForwardTape& tape,
                                std::vector<Matrix> d_outputs) {
  require(d_outputs.size() == tape.outputs.size(), "cotangent count mismatch");
  require(tape.runs.size() == tape.plan.size(), "forward tape was not kept");
  ModelParams grad;
  for (const auto& l : params.layers) {
    grad.layers.push_back({Matrix::Zero(l.W.rows(), l.W.cols()), Matrix::Zero(l.U.rows(), l.U.cols()),
                           Vector::Zero(l.b.size())});
  }
  grad.head_W = Matrix::Zero(params.head_W.rows(), params.head_W.cols());
  grad.head_b = Vector::Zero(params.head_b.size());
  const std::size_t depth = params.layers.size();

  for (std::size_t r = tape.plan.size(); r-- > 0;) {
    const RunPlan& plan = tape.plan[r];
    const auto& steps = tape.runs[r];
    std::vector<Matrix> carry_h(depth), carry_c(depth);
    for (std::size_t s = plan.size(); s-- > 0;) {
      const StepPlan& st = plan[s];
      const StepTape& step = steps[s];
      Matrix from_above;
      if (st.emit >= 0) {
        const Matrix& dy = d_outputs[static_cast<std::size_t>(st.emit)];
        const Matrix& top = step.cells.back().h;
        grad.head_W.noalias() += dy * top.transpose();
        grad.head_b += dy.rowwise().sum();
        from_above = params.head_W.transpose() * dy;
      }
      for (std::size_t l = depth; l-- > 0;) {
        const CellTape& t = step.cells[l];
        const LayerParams& L = params.layers[l];
        const Eigen::Index h = L.hidden();
        Matrix dh = Matrix::Zero(h, t.h.cols());
        if (carry_h[l].size()) dh += carry_h[l];
        if (from_above.size()) dh += from_above;
        Matrix dc = dh.cwiseProduct(t.o).cwiseProduct(
            (1.0 - t.tanh_c.array().square()).matrix());
        if (carry_c[l].size()) dc += carry_c[l];

        Matrix dz(4 * h, t.h.cols());
        dz.topRows(h) = dc.cwiseProduct(t.g).cwiseProduct(t.i.cwiseProduct((1.0 - t.i.array()).matrix()));
        dz.middleRows(h, h) = dc.cwiseProduct(t.c_prev).cwiseProduct(t.f.cwiseProduct((1.0 - t.f.array()).matrix()));
        dz.middleRows(2 * h, h) = dc.cwiseProduct(t.i).cwiseProduct((1.0 - t.g.array().square()).matrix());
        dz.bottomRows(h) = dh.cwiseProduct(t.tanh_c).cwiseProduct(t.o.cwiseProduct((1.0 - t.o.array()).matrix()));

        grad.layers[l].W.noalias() += dz * t.x.transpose();
        grad.layers[l].U.noalias() += dz * t.h_prev.transpose();
        grad.layers[l].b += dz.rowwise().sum();
        carry_c[l] = dc.cwiseProduct(t.f);
        carry_h[l] = L.U.transpose() * dz;
        from_above = L.W.transpose() * dz;
      }
      if (st.feedback >= 0) d_outputs[static_cast<std::size_t>(st.feedback)] += from_above;
    }
  }
  return grad;
}

/// Column-batched copy of the Tx rows of each window: result[k].col(b) is
/// row k of window b.
inline std::vector<Matrix> batch_states(const std::vector<const Grid*>& windows) {
  require(!windows.empty(), "empty batch");
  const Eigen::Index tx = windows.front()->rows();
  const Eigen::Index nx = windows.front()->cols();
  std::vector<Matrix> out(static_cast<std::size_t>(tx), Matrix(nx, static_cast<Eigen::Index>(windows.size())));
  for (std::size_t b = 0; b < windows.size(); ++b) {
    require(windows[b]->rows() == tx && windows[b]->cols() == nx, "windows differ in shape");
    for (Eigen::Index k = 0; k < tx; ++k) out[static_cast<std::size_t>(k)].col(static_cast<Eigen::Index>(b)) = windows[b]->row(k).transpose();
  }
  return out;
}

/// Inverse of batch_states for one batch column.
inline Grid unbatch(const std::vector<Matrix>& states, Eigen::Index column) {
  Grid g(static_cast<Eigen::Index>(states.size()), states.front().rows());
  for (std::size_t k = 0; k < states.size(); ++k) g.row(static_cast<Eigen::Index>(k)) = states[k].col(column).transpose();
  return g;
}

struct WindowOutput {
  Grid outputs;  // Tx x nx, head applied after every input state
  CellState final_state;
};

/// Consumes the Tx input states and maps the top hidden state after each one
/// through the linear head.
inline WindowOutput forward_window(const ModelParams& params, const Grid& input) {
  require(input.rows() >= 1, "empty input window");
  const auto tx = static_cast<std::size_t>(input.rows());
  const std::vector<Matrix> x = batch_states({&input});
  const ForwardTape tape = run_forward(params, x, window_plan(tx));
  WindowOutput out;
  out.outputs = unbatch(tape.outputs, 0);
  out.final_state.h.clear();
  for (const auto& cell : tape.runs.back().back().cells) {
    out.final_state.h.push_back(cell.h);
    out.final_state.c.push_back(cell.c);
  }
  return out;
}

/// Tx predicted states following `input`.
inline Grid rollout_recursive(const ModelParams& params, const Grid& input, bool stateful = true) {
  require(input.rows() >= 1, "empty input window");
  const auto tx = static_cast<std::size_t>(input.rows());
  const ForwardTape tape = run_forward(params, batch_states({&input}), rollout_plan(tx, stateful), false);
  return unbatch(tape.outputs, 0);
}

}  // namespace waveforge
