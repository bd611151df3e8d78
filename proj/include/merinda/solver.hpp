#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "merinda/term_library.hpp"

namespace merinda {

enum class RkMethod { rk4, rk2 };

RkMethod parse_rk_method(const std::string& name);
std::string to_string(RkMethod method);

// Any |state| above this aborts a solve.
inline constexpr double kDivergenceThreshold = 1e6;

// Explicit Runge-Kutta scheme: stage i evaluates f at
// y + dt * sum_{j<i} a(i, j) k_j, and the step is y + dt * sum_i b(i) k_i.
template <typename Scalar>
struct ButcherTableau {
  MatrixX<Scalar> a;
  VectorX<Scalar> b;

  Index stages() const { return b.size(); }

  static ButcherTableau make(RkMethod method) {
    ButcherTableau t;
    if (method == RkMethod::rk4) {
      t.a = MatrixX<Scalar>::Zero(4, 4);
      t.a(1, 0) = Scalar(0.5);
      t.a(2, 1) = Scalar(0.5);
      t.a(3, 2) = Scalar(1);
      t.b.resize(4);
      t.b << Scalar(1) / 6, Scalar(1) / 3, Scalar(1) / 3, Scalar(1) / 6;
    } else {
      // explicit midpoint
      t.a = MatrixX<Scalar>::Zero(2, 2);
      t.a(1, 0) = Scalar(0.5);
      t.b.resize(2);
      t.b << Scalar(0), Scalar(1);
    }
    return t;
  }
};

// Intermediates of one step: stage states and stage derivatives (columns).
template <typename Scalar>
struct StepRecord {
  VectorX<Scalar> y;
  VectorX<Scalar> u;
  MatrixX<Scalar> stage_states;
  MatrixX<Scalar> stage_derivs;
};

template <typename Scalar>
struct SolveTape {
  RkMethod method = RkMethod::rk4;
  Scalar dt = Scalar(0);
  Index input_rows = 0;
  std::vector<StepRecord<Scalar>> records;

  Index steps() const { return static_cast<Index>(records.size()); }
};

template <typename Scalar>
struct SolveResult {
  MatrixX<Scalar> Y;  // (steps + 1) x n
  SolveTape<Scalar> tape;
};

template <typename Scalar>
struct SolveGradient {
  MatrixX<Scalar> dtheta;  // n x library size
  VectorX<Scalar> dy0;
  MatrixX<Scalar> dU;  // input_rows x m
};

namespace detail {

template <typename Scalar, typename Derived>
void check_state(const Eigen::MatrixBase<Derived>& y, Index step) {
  for (Index i = 0; i < y.size(); ++i) {
    const Scalar v = y(i);
    if (!std::isfinite(v) || std::abs(v) > Scalar(kDivergenceThreshold)) throw DivergenceError(step);
  }
}

template <typename Scalar>
VectorX<Scalar> input_row(const MatrixX<Scalar>& U, Index m, Index t) {
  return m == 0 ? VectorX<Scalar>(0) : VectorX<Scalar>(U.row(t).transpose());
}

}  // namespace detail

// Fixed-step integration of dy/dt = theta * phi(y, u) with inputs held
// constant over each step (u = U.row(t) on step t). Y.row(0) = y0.
// Throws DivergenceError carrying the failing step index.
template <typename Scalar>
SolveResult<Scalar> solve(const SparseModel<Scalar>& model, const VectorX<Scalar>& y0,
                          const MatrixX<Scalar>& U, Scalar dt, Index steps,
                          RkMethod method = RkMethod::rk4) {
  const Index n = model.n(), m = model.m();
  if (y0.size() != n) throw ContractError("solve: y0 has wrong dimension");
  if (!(dt > Scalar(0))) throw ContractError("solve: dt must be positive");
  if (steps < 0) throw ContractError("solve: negative step count");
  if (m > 0 && (U.cols() != m || U.rows() < steps + 1))
    throw ContractError("solve: input matrix must have at least steps + 1 rows and m columns");

  const auto tab = ButcherTableau<Scalar>::make(method);
  const Index S = tab.stages();
  const MatrixX<Scalar>& theta = model.theta();
  const TermLibrary& lib = model.library();

  SolveResult<Scalar> out;
  out.Y.resize(steps + 1, n);
  out.Y.row(0) = y0.transpose();
  out.tape.method = method;
  out.tape.dt = dt;
  out.tape.input_rows = m > 0 ? U.rows() : 0;
  out.tape.records.reserve(static_cast<std::size_t>(steps));
  detail::check_state<Scalar>(y0, 0);

  VectorX<Scalar> y = y0;
  for (Index t = 0; t < steps; ++t) {
    StepRecord<Scalar> rec;
    rec.y = y;
    rec.u = detail::input_row(U, m, t);
    rec.stage_states.resize(n, S);
    rec.stage_derivs.resize(n, S);
    for (Index i = 0; i < S; ++i) {
      VectorX<Scalar> s = y;
      for (Index j = 0; j < i; ++j)
        if (tab.a(i, j) != Scalar(0)) s += dt * tab.a(i, j) * rec.stage_derivs.col(j);
      detail::check_state<Scalar>(s, t);
      rec.stage_states.col(i) = s;
      rec.stage_derivs.col(i) = theta * evaluate<Scalar>(lib, s, rec.u);
    }
    VectorX<Scalar> next = y;
    for (Index i = 0; i < S; ++i)
      if (tab.b(i) != Scalar(0)) next += dt * tab.b(i) * rec.stage_derivs.col(i);
    detail::check_state<Scalar>(next, t + 1);
    out.Y.row(t + 1) = next.transpose();
    out.tape.records.push_back(std::move(rec));
    y = std::move(next);
  }
  return out;
}

// Re-integrates from the tape's initial state and stored inputs.
template <typename Scalar>
MatrixX<Scalar> replay(const SolveTape<Scalar>& tape, const SparseModel<Scalar>& model) {
  const Index n = model.n(), m = model.m();
  if (tape.records.empty()) return MatrixX<Scalar>(0, n);
  MatrixX<Scalar> U(m > 0 ? tape.steps() + 1 : 0, m);
  for (Index t = 0; t < tape.steps() && m > 0; ++t) U.row(t) = tape.records[t].u.transpose();
  if (m > 0) U.row(tape.steps()) = tape.records.back().u.transpose();
  return solve(model, tape.records.front().y, U, tape.dt, tape.steps(), tape.method).Y;
}

// Reverse-mode gradients of a scalar loss L(Y) through the unrolled scheme,
// given dL/dY. Exact for the computation that produced the tape.
template <typename Scalar>
SolveGradient<Scalar> backprop_solve(const SolveTape<Scalar>& tape,
                                     const SparseModel<Scalar>& model,
                                     const MatrixX<Scalar>& dL_dY) {
  const Index n = model.n(), m = model.m();
  const Index steps = tape.steps();
  if (dL_dY.rows() != steps + 1 || dL_dY.cols() != n)
    throw ContractError("backprop_solve: dL_dY must be (steps + 1) x n");
  if (!tape.records.empty() &&
      (tape.records.front().y.size() != n || tape.records.front().u.size() != m))
    throw ContractError("backprop_solve: tape does not match model dimensions");

  const auto tab = ButcherTableau<Scalar>::make(tape.method);
  const Index S = tab.stages();
  const Scalar dt = tape.dt;
  const MatrixX<Scalar>& theta = model.theta();
  const TermLibrary& lib = model.library();

  SolveGradient<Scalar> grad;
  grad.dtheta = MatrixX<Scalar>::Zero(n, lib.size());
  grad.dU = MatrixX<Scalar>::Zero(tape.input_rows, m);

  VectorX<Scalar> gy = dL_dY.row(steps).transpose();
  MatrixX<Scalar> dk(n, S);
  for (Index t = steps - 1; t >= 0; --t) {
    const StepRecord<Scalar>& rec = tape.records[t];
    for (Index i = 0; i < S; ++i) dk.col(i) = dt * tab.b(i) * gy;
    VectorX<Scalar> dy = gy;
    for (Index i = S - 1; i >= 0; --i) {
      const VectorX<Scalar> s = rec.stage_states.col(i);
      const VectorX<Scalar> phi = evaluate<Scalar>(lib, s, rec.u);
      grad.dtheta.noalias() += dk.col(i) * phi.transpose();
      const VectorX<Scalar> dphi = theta.transpose() * dk.col(i);
      const MatrixX<Scalar> jac = evaluate_jacobian_full<Scalar>(lib, s, rec.u);
      const VectorX<Scalar> dvars = jac.transpose() * dphi;
      const VectorX<Scalar> ds = dvars.head(n);
      if (m > 0) grad.dU.row(t) += dvars.tail(m).transpose();
      dy += ds;
      for (Index j = 0; j < i; ++j)
        if (tab.a(i, j) != Scalar(0)) dk.col(j) += dt * tab.a(i, j) * ds;
    }
    gy = dy + dL_dY.row(t).transpose();
  }
  grad.dy0 = gy;
  return grad;
}

}  // namespace merinda
