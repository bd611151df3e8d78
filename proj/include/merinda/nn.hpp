#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "merinda/solver.hpp"
#include "merinda/term_library.hpp"

namespace merinda {

// ---------------------------------------------------------------------------
// GRU encoder
// ---------------------------------------------------------------------------

// Gate weights act on concat(h_prev, x), so each is H x (H + D).
template <typename Scalar>
struct GruParams {
  Index hidden = 0;
  Index input = 0;
  MatrixX<Scalar> Wz, Wr, Wa;
  VectorX<Scalar> bias_z, bias_r, bias_c;

  static GruParams zeros(Index H, Index D) {
    GruParams p;
    p.hidden = H;
    p.input = D;
    p.Wz = p.Wr = p.Wa = MatrixX<Scalar>::Zero(H, H + D);
    p.bias_z = p.bias_r = p.bias_c = VectorX<Scalar>::Zero(H);
    return p;
  }

  // Uniform(-s, s), s = 1 / sqrt(H + D).
  template <typename Rng>
  static GruParams random(Index H, Index D, Rng& rng) {
    GruParams p = zeros(H, D);
    const Scalar s = Scalar(1) / std::sqrt(Scalar(H + D));
    std::uniform_real_distribution<Scalar> dist(-s, s);
    auto fill = [&](auto& x) {
      for (Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
    };
    fill(p.Wz), fill(p.Wr), fill(p.Wa), fill(p.bias_z), fill(p.bias_r), fill(p.bias_c);
    return p;
  }
};

template <typename Scalar>
struct GruStep {
  VectorX<Scalar> h_prev, concat, z, r, concat_r, c;
};

template <typename Scalar>
struct GruForward {
  MatrixX<Scalar> hidden;  // k x H, row t = h_{t+1}
  std::vector<GruStep<Scalar>> tape;
};

template <typename Scalar>
VectorX<Scalar> sigmoid(const VectorX<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

// Per step:
//   z = sigmoid(Wz [h; x] + bz),  r = sigmoid(Wr [h; x] + br)
//   c = tanh(Wa [r*h; x] + bc),   h' = z*h + (1 - z)*c
template <typename Scalar>
GruForward<Scalar> gru_forward(const GruParams<Scalar>& p, const MatrixX<Scalar>& sequence,
                               const VectorX<Scalar>& h0) {
  const Index H = p.hidden, D = p.input;
  if (sequence.cols() != D) throw ContractError("gru_forward: sequence width != input size");
  if (h0.size() != H) throw ContractError("gru_forward: h0 size != hidden size");

  GruForward<Scalar> out;
  out.hidden.resize(sequence.rows(), H);
  out.tape.reserve(static_cast<std::size_t>(sequence.rows()));
  VectorX<Scalar> h = h0;
  for (Index t = 0; t < sequence.rows(); ++t) {
    GruStep<Scalar> s;
    s.h_prev = h;
    s.concat.resize(H + D);
    s.concat << h, sequence.row(t).transpose();
    s.z = sigmoid<Scalar>(p.Wz * s.concat + p.bias_z);
    s.r = sigmoid<Scalar>(p.Wr * s.concat + p.bias_r);
    s.concat_r.resize(H + D);
    s.concat_r << s.r.cwiseProduct(h), sequence.row(t).transpose();
    s.c = (p.Wa * s.concat_r + p.bias_c).array().tanh().matrix();
    h = s.z.cwiseProduct(h) + (VectorX<Scalar>::Ones(H) - s.z).cwiseProduct(s.c);
    out.hidden.row(t) = h.transpose();
    out.tape.push_back(std::move(s));
  }
  return out;
}

template <typename Scalar>
struct GruBackward {
  GruParams<Scalar> grad;
  VectorX<Scalar> dh0;
  MatrixX<Scalar> dX;  // k x D
};

// dH holds dL/dh_t for every emitted hidden state (rows of GruForward::hidden).
template <typename Scalar>
GruBackward<Scalar> gru_backward(const GruParams<Scalar>& p, const GruForward<Scalar>& fwd,
                                 const MatrixX<Scalar>& dH) {
  const Index H = p.hidden, D = p.input;
  const Index k = static_cast<Index>(fwd.tape.size());
  if (dH.rows() != k || dH.cols() != H) throw ContractError("gru_backward: dH shape mismatch");

  GruBackward<Scalar> out;
  out.grad = GruParams<Scalar>::zeros(H, D);
  out.dX = MatrixX<Scalar>::Zero(k, D);
  VectorX<Scalar> dh = VectorX<Scalar>::Zero(H);
  const VectorX<Scalar> ones = VectorX<Scalar>::Ones(H);
  for (Index t = k - 1; t >= 0; --t) {
    const GruStep<Scalar>& s = fwd.tape[t];
    dh += dH.row(t).transpose();

    const VectorX<Scalar> dz = dh.cwiseProduct(s.h_prev - s.c);
    const VectorX<Scalar> dc = dh.cwiseProduct(ones - s.z);
    VectorX<Scalar> dh_prev = dh.cwiseProduct(s.z);

    const VectorX<Scalar> da_c = dc.cwiseProduct(ones - s.c.cwiseAbs2());
    out.grad.Wa.noalias() += da_c * s.concat_r.transpose();
    out.grad.bias_c += da_c;
    const VectorX<Scalar> dconcat_r = p.Wa.transpose() * da_c;
    const VectorX<Scalar> drh = dconcat_r.head(H);
    const VectorX<Scalar> dr = drh.cwiseProduct(s.h_prev);
    dh_prev += drh.cwiseProduct(s.r);
    out.dX.row(t) += dconcat_r.tail(D).transpose();

    const VectorX<Scalar> da_z = dz.cwiseProduct(s.z).cwiseProduct(ones - s.z);
    const VectorX<Scalar> da_r = dr.cwiseProduct(s.r).cwiseProduct(ones - s.r);
    out.grad.Wz.noalias() += da_z * s.concat.transpose();
    out.grad.Wr.noalias() += da_r * s.concat.transpose();
    out.grad.bias_z += da_z;
    out.grad.bias_r += da_r;
    const VectorX<Scalar> dconcat = p.Wz.transpose() * da_z + p.Wr.transpose() * da_r;
    dh_prev += dconcat.head(H);
    out.dX.row(t) += dconcat.tail(D).transpose();

    dh = dh_prev;
  }
  out.dh0 = dh;
  return out;
}

// ---------------------------------------------------------------------------
// Dense coefficient head
// ---------------------------------------------------------------------------

// MLP with ReLU on hidden layers and identity output. The output vector is the
// row-major coefficient block (rows x cols) followed by `shifts` values.
template <typename Scalar>
struct DenseParams {
  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;
  Index rows = 0;
  Index cols = 0;
  Index shifts = 0;

  Index output_width() const { return rows * cols + shifts; }
  Index input_width() const { return weights.empty() ? 0 : weights.front().cols(); }
  Index layers() const { return static_cast<Index>(weights.size()); }

  static DenseParams zeros(Index input, const std::vector<Index>& hidden, Index rows, Index cols,
                           Index shifts) {
    DenseParams p;
    p.rows = rows;
    p.cols = cols;
    p.shifts = shifts;
    Index in = input;
    std::vector<Index> widths = hidden;
    widths.push_back(rows * cols + shifts);
    for (Index w : widths) {
      if (w < 1) throw ContractError("dense layer widths must be positive");
      p.weights.push_back(MatrixX<Scalar>::Zero(w, in));
      p.biases.push_back(VectorX<Scalar>::Zero(w));
      in = w;
    }
    return p;
  }

  // Uniform(-s, s), s = 1 / sqrt(fan-in) per layer.
  template <typename Rng>
  static DenseParams random(Index input, const std::vector<Index>& hidden, Index rows, Index cols,
                            Index shifts, Rng& rng) {
    DenseParams p = zeros(input, hidden, rows, cols, shifts);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      const Scalar s = Scalar(1) / std::sqrt(Scalar(p.weights[l].cols()));
      std::uniform_real_distribution<Scalar> dist(-s, s);
      for (Index i = 0; i < p.weights[l].size(); ++i) p.weights[l].data()[i] = dist(rng);
      for (Index i = 0; i < p.biases[l].size(); ++i) p.biases[l](i) = dist(rng);
    }
    return p;
  }
};

template <typename Scalar>
struct DenseForward {
  MatrixX<Scalar> theta_raw;  // rows x cols
  VectorX<Scalar> shifts;
  std::vector<VectorX<Scalar>> inputs;  // input of each layer
  std::vector<VectorX<Scalar>> pre;     // pre-activation of each layer
};

template <typename Scalar>
DenseForward<Scalar> dense_forward(const DenseParams<Scalar>& p, const VectorX<Scalar>& h) {
  if (h.size() != p.input_width()) throw ContractError("dense_forward: input width mismatch");
  DenseForward<Scalar> out;
  VectorX<Scalar> a = h;
  for (Index l = 0; l < p.layers(); ++l) {
    out.inputs.push_back(a);
    VectorX<Scalar> zl = p.weights[l] * a + p.biases[l];
    a = (l + 1 < p.layers()) ? VectorX<Scalar>(zl.cwiseMax(Scalar(0))) : zl;
    out.pre.push_back(std::move(zl));
  }
  out.theta_raw =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          a.data(), p.rows, p.cols);
  out.shifts = a.tail(p.shifts);
  return out;
}

template <typename Scalar>
struct DenseBackward {
  DenseParams<Scalar> grad;
  VectorX<Scalar> dh;
};

template <typename Scalar>
DenseBackward<Scalar> dense_backward(const DenseParams<Scalar>& p, const DenseForward<Scalar>& fwd,
                                     const MatrixX<Scalar>& dtheta, const VectorX<Scalar>& dshifts) {
  if (dtheta.rows() != p.rows || dtheta.cols() != p.cols || dshifts.size() != p.shifts)
    throw ContractError("dense_backward: upstream gradient shape mismatch");
  if (static_cast<Index>(fwd.pre.size()) != p.layers())
    throw ContractError("dense_backward: tape does not match parameters");

  DenseBackward<Scalar> out;
  out.grad = p;
  VectorX<Scalar> g(p.output_width());
  for (Index i = 0; i < p.rows; ++i)
    for (Index j = 0; j < p.cols; ++j) g(i * p.cols + j) = dtheta(i, j);
  g.tail(p.shifts) = dshifts;
  for (Index l = p.layers() - 1; l >= 0; --l) {
    if (l + 1 < p.layers())
      g = g.cwiseProduct(
          fwd.pre[l].unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); }));
    out.grad.weights[l].noalias() = g * fwd.inputs[l].transpose();
    out.grad.biases[l] = g;
    g = p.weights[l].transpose() * g;
  }
  out.dh = g;
  return out;
}

// ---------------------------------------------------------------------------
// Sparsification, input shifts, loss
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SupportSelection {
  std::vector<Index> flat;  // ascending row-major indices
  MatrixX<Scalar> mask;
  MatrixX<Scalar> values;
  bool degenerate = false;  // some selected entry is a structural zero

  std::vector<SupportEntry> entries() const {
    std::vector<SupportEntry> out;
    for (Index f : flat) out.push_back({f / mask.cols(), f % mask.cols()});
    return out;
  }
};

// Zeroes entries outside the mask. A select rather than a product, so huge
// or infinite values outside the support do not turn into NaN.
template <typename Scalar>
MatrixX<Scalar> apply_mask(const MatrixX<Scalar>& values, const MatrixX<Scalar>& mask) {
  return (mask.array() != Scalar(0)).select(values, MatrixX<Scalar>::Zero(values.rows(), values.cols()));
}

// Keeps the p entries of largest magnitude; ties go to the smaller row-major index.
template <typename Scalar>
SupportSelection<Scalar> sparsify(const MatrixX<Scalar>& theta_raw, Index p) {
  const Index rows = theta_raw.rows(), cols = theta_raw.cols(), total = rows * cols;
  if (p < 1 || p > total) throw ContractError("sparsify: p must lie in [1, rows * cols]");
  // NaN ranks below every number so the comparator stays a strict weak order.
  auto at = [&](Index f) {
    const Scalar v = std::abs(theta_raw(f / cols, f % cols));
    return std::isnan(v) ? Scalar(-1) : v;
  };
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + p, order.end(), [&](Index a, Index b) {
    const Scalar va = at(a), vb = at(b);
    return va != vb ? va > vb : a < b;
  });

  SupportSelection<Scalar> sel;
  sel.flat.assign(order.begin(), order.begin() + p);
  std::sort(sel.flat.begin(), sel.flat.end());
  sel.mask = MatrixX<Scalar>::Zero(rows, cols);
  for (Index f : sel.flat) {
    sel.mask(f / cols, f % cols) = Scalar(1);
    if (at(f) <= Scalar(kStructuralZero)) sel.degenerate = true;
  }
  sel.values = apply_mask(theta_raw, sel.mask);
  return sel;
}

template <typename Scalar>
MatrixX<Scalar> apply_shifts(const MatrixX<Scalar>& U, const VectorX<Scalar>& shifts) {
  if (U.cols() != shifts.size()) throw ContractError("apply_shifts: width mismatch");
  return U.rowwise() + shifts.transpose();
}

template <typename Scalar>
Scalar ode_loss(const MatrixX<Scalar>& Y, const MatrixX<Scalar>& Y_est) {
  if (Y.rows() != Y_est.rows() || Y.cols() != Y_est.cols())
    throw ContractError("ode_loss: shape mismatch");
  if (Y.size() == 0) return Scalar(0);
  return (Y_est - Y).squaredNorm() / Scalar(Y.size());
}

// dL/dY_est of ode_loss.
template <typename Scalar>
MatrixX<Scalar> ode_loss_grad(const MatrixX<Scalar>& Y, const MatrixX<Scalar>& Y_est) {
  if (Y.rows() != Y_est.rows() || Y.cols() != Y_est.cols())
    throw ContractError("ode_loss: shape mismatch");
  return (Y_est - Y) * (Scalar(2) / Scalar(std::max<Index>(Y.size(), 1)));
}

// ---------------------------------------------------------------------------
// Whole network
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Network {
  GruParams<Scalar> gru;
  DenseParams<Scalar> dense;

  Index parameter_count() const {
    Index count = 3 * gru.Wz.size() + 3 * gru.bias_z.size();
    for (Index l = 0; l < dense.layers(); ++l)
      count += dense.weights[l].size() + dense.biases[l].size();
    return count;
  }

  // Visits every parameter block in a fixed order.
  template <typename F>
  void for_each_block(F&& f) {
    f(gru.Wz), f(gru.Wr), f(gru.Wa), f(gru.bias_z), f(gru.bias_r), f(gru.bias_c);
    for (Index l = 0; l < dense.layers(); ++l) f(dense.weights[l]), f(dense.biases[l]);
  }
  template <typename F>
  void for_each_block(F&& f) const {
    const_cast<Network*>(this)->for_each_block([&](const auto& block) { f(block); });
  }

  VectorX<Scalar> pack() const {
    VectorX<Scalar> out(parameter_count());
    Index offset = 0;
    for_each_block([&](const auto& block) {
      out.segment(offset, block.size()) =
          Eigen::Map<const VectorX<Scalar>>(block.data(), block.size());
      offset += block.size();
    });
    return out;
  }

  void unpack(const VectorX<Scalar>& flat) {
    if (flat.size() != parameter_count()) throw ContractError("unpack: parameter count mismatch");
    Index offset = 0;
    for_each_block([&](auto& block) {
      Eigen::Map<VectorX<Scalar>>(block.data(), block.size()) = flat.segment(offset, block.size());
      offset += block.size();
    });
  }
};

template <typename Scalar>
struct NetworkForward {
  GruForward<Scalar> gru;
  DenseForward<Scalar> dense;
};

// Only the final hidden state feeds the dense head.
template <typename Scalar>
NetworkForward<Scalar> network_forward(const Network<Scalar>& net, const MatrixX<Scalar>& sequence) {
  if (sequence.rows() < 1) throw ContractError("network_forward: empty sequence");
  NetworkForward<Scalar> out;
  out.gru = gru_forward(net.gru, sequence, VectorX<Scalar>(VectorX<Scalar>::Zero(net.gru.hidden)));
  const VectorX<Scalar> last = out.gru.hidden.row(out.gru.hidden.rows() - 1).transpose();
  out.dense = dense_forward(net.dense, last);
  return out;
}

// Gradients of all network parameters given dL/dtheta_raw and dL/dshifts.
template <typename Scalar>
Network<Scalar> network_backward(const Network<Scalar>& net, const NetworkForward<Scalar>& fwd,
                                 const MatrixX<Scalar>& dtheta_raw, const VectorX<Scalar>& dshifts) {
  if (static_cast<Index>(fwd.gru.tape.size()) != fwd.gru.hidden.rows() ||
      fwd.gru.hidden.cols() != net.gru.hidden)
    throw ContractError("network_backward: tape does not match parameters");
  Network<Scalar> grad;
  auto dense = dense_backward(net.dense, fwd.dense, dtheta_raw, dshifts);
  grad.dense = std::move(dense.grad);
  MatrixX<Scalar> dH = MatrixX<Scalar>::Zero(fwd.gru.hidden.rows(), net.gru.hidden);
  dH.row(dH.rows() - 1) = dense.dh.transpose();
  grad.gru = gru_backward(net.gru, fwd.gru, dH).grad;
  return grad;
}

// ---------------------------------------------------------------------------
// Composed pipeline for one window:
//   GRU -> dense -> support mask -> input shifts -> SOLVE -> ode_loss
// ---------------------------------------------------------------------------

// Loss assigned to a window whose solve diverged.
inline constexpr double kDivergedLoss = 1e6;

template <typename Scalar>
struct WindowData {
  MatrixX<Scalar> sequence;  // k x D network input
  MatrixX<Scalar> Y;         // k x n measured states
  MatrixX<Scalar> U;         // k x m measured inputs
};

struct PipelineSettings {
  TermLibrary library;
  double dt = 0.01;       // sample interval
  Index solve_steps = 1;  // integrator steps per sample interval
  RkMethod method = RkMethod::rk4;
};

template <typename Scalar>
struct PipelineResult {
  Scalar loss = Scalar(0);
  bool diverged = false;
  MatrixX<Scalar> theta_raw;
  VectorX<Scalar> shifts;
  MatrixX<Scalar> Y_est;
  Network<Scalar> grad;  // empty unless requested
};

template <typename Scalar>
Network<Scalar> zeros_like(const Network<Scalar>& net) {
  Network<Scalar> z = net;
  z.for_each_block([](auto& block) { block.setZero(); });
  return z;
}

// With `want_grad`, returns exact gradients of the window loss with the
// mask held fixed (straight-through on selected entries, zero elsewhere).
// Masked model, input shifts, SOLVE and ode_loss for one window, with the
// gradients with respect to the (unmasked) coefficients and the shifts.
template <typename Scalar>
struct WindowSolve {
  Scalar loss = Scalar(0);
  bool diverged = false;
  MatrixX<Scalar> Y_est;
  MatrixX<Scalar> dtheta;  // masked; zero when diverged
  VectorX<Scalar> dshifts;
};

template <typename Scalar>
WindowSolve<Scalar> solve_window(const MatrixX<Scalar>& theta_raw, const VectorX<Scalar>& shifts,
                                 const MatrixX<Scalar>& mask, const WindowData<Scalar>& w,
                                 const PipelineSettings& cfg, bool want_grad) {
  const TermLibrary& lib = cfg.library;
  const Index n = lib.n(), m = lib.m(), k = w.Y.rows(), ss = cfg.solve_steps;
  if (w.Y.cols() != n || w.U.rows() != k || w.U.cols() != m || w.sequence.rows() != k)
    throw ContractError("pipeline: window shape mismatch");
  if (mask.rows() != n || mask.cols() != lib.size() || theta_raw.rows() != n ||
      theta_raw.cols() != lib.size() || shifts.size() != m)
    throw ContractError("pipeline: coefficient shape mismatch");
  if (ss < 1) throw ContractError("pipeline: solve_steps must be >= 1");

  std::vector<SupportEntry> support;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < lib.size(); ++j)
      if (mask(i, j) != Scalar(0)) support.push_back({i, j});
  const SparseModel<Scalar> model(lib, apply_mask(theta_raw, mask), support);

  const MatrixX<Scalar> shifted = apply_shifts(w.U, shifts);
  const Index sub_steps = (k - 1) * ss;
  MatrixX<Scalar> U_sub(m > 0 ? sub_steps + 1 : 0, m);
  for (Index r = 0; r < U_sub.rows(); ++r) U_sub.row(r) = shifted.row(std::min(r / ss, k - 1));

  WindowSolve<Scalar> out;
  SolveResult<Scalar> sol;
  try {
    sol = solve(model, VectorX<Scalar>(w.Y.row(0).transpose()), U_sub,
                static_cast<Scalar>(cfg.dt) / Scalar(ss), sub_steps, cfg.method);
  } catch (const DivergenceError&) {
    out.diverged = true;
    out.loss = Scalar(kDivergedLoss);
    if (want_grad) {
      out.dtheta = MatrixX<Scalar>::Zero(n, lib.size());
      out.dshifts = VectorX<Scalar>::Zero(m);
    }
    return out;
  }
  out.Y_est.resize(k, n);
  for (Index t = 0; t < k; ++t) out.Y_est.row(t) = sol.Y.row(t * ss);
  out.loss = ode_loss(w.Y, out.Y_est);
  if (!want_grad) return out;

  const MatrixX<Scalar> dYest = ode_loss_grad(w.Y, out.Y_est);
  MatrixX<Scalar> dY_sub = MatrixX<Scalar>::Zero(sub_steps + 1, n);
  for (Index t = 0; t < k; ++t) dY_sub.row(t * ss) = dYest.row(t);
  const SolveGradient<Scalar> sg = backprop_solve(sol.tape, model, dY_sub);
  out.dtheta = apply_mask(sg.dtheta, mask);
  out.dshifts = m > 0 ? VectorX<Scalar>(sg.dU.colwise().sum().transpose()) : VectorX<Scalar>(0);
  return out;
}

// With `want_grad`, returns exact gradients of the window loss with the
// mask held fixed (straight-through on selected entries, zero elsewhere).
template <typename Scalar>
PipelineResult<Scalar> pipeline_window(const Network<Scalar>& net, const WindowData<Scalar>& w,
                                       const MatrixX<Scalar>& mask, const PipelineSettings& cfg,
                                       bool want_grad) {
  PipelineResult<Scalar> out;
  const NetworkForward<Scalar> fwd = network_forward(net, w.sequence);
  out.theta_raw = fwd.dense.theta_raw;
  out.shifts = fwd.dense.shifts;
  WindowSolve<Scalar> ws = solve_window(out.theta_raw, out.shifts, mask, w, cfg, want_grad);
  out.loss = ws.loss;
  out.diverged = ws.diverged;
  out.Y_est = std::move(ws.Y_est);
  if (!want_grad) return out;
  out.grad = ws.diverged ? zeros_like(net) : network_backward(net, fwd, ws.dtheta, ws.dshifts);
  return out;
}

// Batch loss with coefficients pooled over the batch: every window is solved
// from its own initial state with the batch-mean coefficients and shifts.
// The loss is the mean window loss.
template <typename Scalar>
struct BatchResult {
  Scalar loss = Scalar(0);
  Index diverged = 0;
  MatrixX<Scalar> theta_raw;  // pooled, before masking
  VectorX<Scalar> shifts;
  Network<Scalar> grad;
};

template <typename Scalar>
BatchResult<Scalar> pipeline_pooled(const Network<Scalar>& net,
                                    const std::vector<const WindowData<Scalar>*>& windows,
                                    const MatrixX<Scalar>& mask, const PipelineSettings& cfg,
                                    bool want_grad) {
  if (windows.empty()) throw ContractError("pipeline_pooled: empty batch");
  const Scalar S = Scalar(windows.size());
  std::vector<NetworkForward<Scalar>> fwd;
  fwd.reserve(windows.size());
  BatchResult<Scalar> out;
  for (const auto* w : windows) {
    fwd.push_back(network_forward(net, w->sequence));
    if (out.theta_raw.size() == 0) {
      out.theta_raw = fwd.back().dense.theta_raw;
      out.shifts = fwd.back().dense.shifts;
    } else {
      out.theta_raw += fwd.back().dense.theta_raw;
      out.shifts += fwd.back().dense.shifts;
    }
  }
  out.theta_raw /= S;
  out.shifts /= S;

  MatrixX<Scalar> dtheta = MatrixX<Scalar>::Zero(out.theta_raw.rows(), out.theta_raw.cols());
  VectorX<Scalar> dshifts = VectorX<Scalar>::Zero(out.shifts.size());
  for (const auto* w : windows) {
    const WindowSolve<Scalar> ws = solve_window(out.theta_raw, out.shifts, mask, *w, cfg, want_grad);
    out.loss += ws.loss;
    if (ws.diverged) ++out.diverged;
    if (want_grad) {
      dtheta += ws.dtheta;
      dshifts += ws.dshifts;
    }
  }
  out.loss /= S;
  if (!want_grad) return out;

  // d(mean loss)/d(pooled) = sum / S; each window contributes 1/S of the pool.
  dtheta /= S * S;
  dshifts /= S * S;
  out.grad = zeros_like(net);
  VectorX<Scalar> flat = VectorX<Scalar>::Zero(net.parameter_count());
  for (std::size_t i = 0; i < windows.size(); ++i)
    flat += network_backward(net, fwd[i], dtheta, dshifts).pack();
  out.grad.unpack(flat);
  return out;
}

}  // namespace merinda
