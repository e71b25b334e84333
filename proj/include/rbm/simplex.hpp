#pragma once

// Bounded-variable revised simplex with Bland's rule, used as the exact
// reference solver. Two phases: artificial variables clear the equality
// residual, then the true objective runs on the feasible basis. The basis is
// refactored densely every pivot; fine at dispatch-problem sizes.

#include "rbm/lp.hpp"

namespace rbm {

namespace detail {

enum class VarState { Basic, AtLo, AtHi, FreeZero };

struct SimplexTableau {
  MatrixXd a;       // m x (n + m): canonical columns then artificials
  VectorXd b, lo, hi, x;
  std::vector<VarState> state;
  std::vector<int> basis;  // row -> variable
  int n_real = 0;          // canonical variables (structural + row slacks)
  int pivots = 0;
};

inline bool run_simplex_phase(SimplexTableau& t, const VectorXd& cost,
                              bool allow_artificial_entry, LpStatus& verdict,
                              VectorXd& y_out, VectorXd& d_out) {
  const double tol = 1e-9;
  int m = static_cast<int>(t.a.rows());
  int nn = static_cast<int>(t.a.cols());
  const int max_pivots = 20000;

  for (;; ++t.pivots) {
    if (t.pivots > max_pivots) {
      verdict = LpStatus::IterationLimit;
      return false;
    }
    MatrixXd B(m, m);
    for (int i = 0; i < m; ++i) B.col(i) = t.a.col(t.basis[i]);
    Eigen::PartialPivLU<MatrixXd> lu(B);

    VectorXd rhs = t.b;
    for (int j = 0; j < nn; ++j)
      if (t.state[j] != VarState::Basic && t.x[j] != 0.0)
        rhs -= t.a.col(j) * t.x[j];
    VectorXd xb = lu.solve(rhs);
    for (int i = 0; i < m; ++i) t.x[t.basis[i]] = xb[i];

    VectorXd cb(m);
    for (int i = 0; i < m; ++i) cb[i] = cost[t.basis[i]];
    VectorXd y = B.transpose().partialPivLu().solve(cb);

    int enter = -1, dir = 0;
    VectorXd d = VectorXd::Zero(nn);
    for (int j = 0; j < nn; ++j) {
      if (t.state[j] == VarState::Basic) continue;
      if (!allow_artificial_entry && j >= t.n_real) continue;
      d[j] = cost[j] - y.dot(t.a.col(j));
      int want = 0;
      if (t.state[j] == VarState::AtLo && d[j] < -tol) want = +1;
      if (t.state[j] == VarState::AtHi && d[j] > tol) want = -1;
      if (t.state[j] == VarState::FreeZero && std::abs(d[j]) > tol)
        want = d[j] < 0 ? +1 : -1;
      if (want != 0 && enter == -1) {
        enter = j;
        dir = want;
      }
    }
    if (enter == -1) {
      y_out = y;
      d_out = d;
      verdict = LpStatus::Optimal;
      return true;
    }

    VectorXd w = lu.solve(t.a.col(enter));
    double span = t.hi[enter] - t.lo[enter];
    double best = std::isfinite(span) ? span : kInf;
    int leave_row = -1;  // -1 with finite best: bound flip of the entering var
    for (int i = 0; i < m; ++i) {
      int k = t.basis[i];
      double delta = -dir * w[i];  // change of basic k per unit entering step
      double limit = kInf;
      if (delta < -tol && t.lo[k] > -kInf) limit = (t.x[k] - t.lo[k]) / -delta;
      if (delta > tol && t.hi[k] < kInf) limit = (t.hi[k] - t.x[k]) / delta;
      limit = std::max(limit, 0.0);
      if (limit < best - 1e-12 ||
          (limit < best + 1e-12 && leave_row >= 0 && k < t.basis[leave_row])) {
        best = limit;
        leave_row = i;
      }
    }
    if (!std::isfinite(best)) {
      verdict = LpStatus::Unbounded;
      return false;
    }

    t.x[enter] += dir * best;
    for (int i = 0; i < m; ++i) t.x[t.basis[i]] -= dir * best * w[i];
    if (leave_row == -1) {
      t.state[enter] = dir > 0 ? VarState::AtHi : VarState::AtLo;
      t.x[enter] = dir > 0 ? t.hi[enter] : t.lo[enter];
    } else {
      int k = t.basis[leave_row];
      double delta = -dir * w[leave_row];
      t.state[k] = delta < 0 ? VarState::AtLo : VarState::AtHi;
      t.x[k] = delta < 0 ? t.lo[k] : t.hi[k];
      t.basis[leave_row] = enter;
      t.state[enter] = VarState::Basic;
    }
  }
}

}  // namespace detail

inline LPSolution solve_simplex(const LinearProgram& lp) {
  lp.validate();
  detail::CanonicalLp cf = detail::canonicalize(lp);
  int n = static_cast<int>(cf.c.size());
  int m = static_cast<int>(cf.a.rows());

  detail::SimplexTableau t;
  t.n_real = n;
  t.a = MatrixXd::Zero(m, n + m);
  t.a.leftCols(n) = cf.a;
  t.b = cf.b;
  t.lo = VectorXd::Constant(n + m, 0.0);
  t.hi = VectorXd::Constant(n + m, kInf);
  t.lo.head(n) = cf.lo;
  t.hi.head(n) = cf.hi;
  t.x = VectorXd::Zero(n + m);
  t.state.assign(n + m, detail::VarState::FreeZero);

  for (int j = 0; j < n; ++j) {
    if (cf.lo[j] > -kInf) {
      t.state[j] = detail::VarState::AtLo;
      t.x[j] = cf.lo[j];
    } else if (cf.hi[j] < kInf) {
      t.state[j] = detail::VarState::AtHi;
      t.x[j] = cf.hi[j];
    }
  }
  VectorXd resid = cf.b - cf.a * t.x.head(n);
  for (int i = 0; i < m; ++i) {
    t.a(i, n + i) = resid[i] >= 0.0 ? 1.0 : -1.0;
    t.x[n + i] = std::abs(resid[i]);
    t.state[n + i] = detail::VarState::Basic;
    t.basis.push_back(n + i);
  }

  LPSolution sol;
  VectorXd c1 = VectorXd::Zero(n + m);
  c1.tail(m).setOnes();
  LpStatus verdict;
  VectorXd y, d;
  bool ok = detail::run_simplex_phase(t, c1, true, verdict, y, d);
  sol.iterations = t.pivots;
  double infeas = 0.0;
  for (int i = 0; i < m; ++i) infeas += std::abs(t.x[n + i]);
  if (!ok) {
    sol.status = verdict;
    return sol;
  }
  double b_norm = m > 0 ? cf.b.cwiseAbs().maxCoeff() : 0.0;
  if (infeas > 1e-7 * (1.0 + b_norm)) {
    sol.status = LpStatus::Infeasible;
    VectorXd zl = VectorXd::Zero(n), zh = VectorXd::Zero(n);
    detail::fill_solution(lp, t.x.head(n), y, zl, zh, sol);
    sol.status = LpStatus::Infeasible;
    return sol;
  }

  // artificials are pinned for the true objective
  for (int i = 0; i < m; ++i) t.hi[n + i] = 0.0;
  VectorXd c2 = VectorXd::Zero(n + m);
  c2.head(n) = cf.c;
  ok = detail::run_simplex_phase(t, c2, false, verdict, y, d);
  sol.iterations = t.pivots;
  if (!ok) {
    sol.status = verdict;
    return sol;
  }

  VectorXd z_lo = VectorXd::Zero(n), z_hi = VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) {
    if (t.state[j] == detail::VarState::AtLo) z_lo[j] = std::max(d[j], 0.0);
    if (t.state[j] == detail::VarState::AtHi) z_hi[j] = std::max(-d[j], 0.0);
  }
  detail::fill_solution(lp, t.x.head(n), y, z_lo, z_hi, sol);
  sol.status = LpStatus::Optimal;
  return sol;
}

}  // namespace rbm
