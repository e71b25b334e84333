#pragma once

// Linear program container shared by the interior-point solver and the
// simplex oracle, plus the canonical bounded-equality form both reduce to and
// a KKT residual checker used for cross-validation.

#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rbm/common.hpp"

namespace rbm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::IterationLimit: return "iteration-limit";
  }
  return "?";
}

// min c'x  s.t.  a_eq x = b_eq,  lo_ineq <= a_ineq x <= hi_ineq,  lo <= x <= hi.
// Infinite bounds permitted anywhere a range appears.
struct LinearProgram {
  VectorXd c;
  MatrixXd a_eq;
  VectorXd b_eq;
  MatrixXd a_ineq;
  VectorXd lo_ineq, hi_ineq;
  VectorXd lo, hi;
  std::vector<std::string> names;

  int n_vars() const { return static_cast<int>(c.size()); }
  int n_eq() const { return static_cast<int>(b_eq.size()); }
  int n_ineq() const { return static_cast<int>(lo_ineq.size()); }

  void validate() const {
    int n = n_vars();
    auto dim = [&](bool ok, const std::string& what) {
      if (!ok) throw std::invalid_argument("inconsistent dimension: " + what);
    };
    dim(lo.size() == n && hi.size() == n, "variable bounds");
    dim(a_eq.size() == 0 || a_eq.cols() == n, "equality columns");
    dim(a_eq.rows() == b_eq.size(), "equality rows");
    dim(a_ineq.size() == 0 || a_ineq.cols() == n, "row-constraint columns");
    dim(a_ineq.rows() == lo_ineq.size() && hi_ineq.size() == lo_ineq.size(),
        "row-constraint ranges");
    dim(names.empty() || static_cast<int>(names.size()) == n, "names");
    for (int j = 0; j < n; ++j)
      if (lo[j] > hi[j])
        throw std::invalid_argument("lo > hi for variable " + var_name(j));
    for (int r = 0; r < n_ineq(); ++r)
      if (lo_ineq[r] > hi_ineq[r])
        throw std::invalid_argument("empty row range at row " +
                                    std::to_string(r));
    std::set<std::string> seen;
    for (const auto& nm : names)
      if (!seen.insert(nm).second)
        throw std::invalid_argument("duplicate variable name: " + nm);
  }

  std::string var_name(int j) const {
    return names.empty() ? "x" + std::to_string(j) : names[j];
  }
};

struct LPSolution {
  VectorXd x;
  double obj = 0.0;
  VectorXd y_eq;
  VectorXd y_ineq;  // >0: lower side binds, <0: upper side binds
  VectorXd z_lo, z_hi;
  LpStatus status = LpStatus::IterationLimit;
  int iterations = 0;
  double duality_gap = 0.0;
  std::vector<double> obj_history, dual_obj_history, gap_history;

  double mu_max(int row) const { return std::max(0.0, -y_ineq[row]); }
  double mu_min(int row) const { return std::max(0.0, y_ineq[row]); }
};

namespace detail {

// Canonical bounded-equality form: min c'v, A v = b, lo <= v <= hi, where
// v = [x; s] and each row constraint r became a_ineq(r) x - s_r = 0 with the
// row's range moved onto s_r.
struct CanonicalLp {
  MatrixXd a;
  VectorXd b, c, lo, hi;
  int n_struct = 0;
};

inline CanonicalLp canonicalize(const LinearProgram& lp) {
  int n = lp.n_vars(), me = lp.n_eq(), mi = lp.n_ineq();
  CanonicalLp cf;
  cf.n_struct = n;
  cf.a = MatrixXd::Zero(me + mi, n + mi);
  cf.b = VectorXd::Zero(me + mi);
  if (me) {
    cf.a.topLeftCorner(me, n) = lp.a_eq;
    cf.b.head(me) = lp.b_eq;
  }
  if (mi) {
    cf.a.block(me, 0, mi, n) = lp.a_ineq;
    cf.a.block(me, n, mi, mi) = -MatrixXd::Identity(mi, mi);
  }
  cf.c = VectorXd::Zero(n + mi);
  cf.c.head(n) = lp.c;
  cf.lo = VectorXd::Constant(n + mi, -kInf);
  cf.hi = VectorXd::Constant(n + mi, kInf);
  cf.lo.head(n) = lp.lo;
  cf.hi.head(n) = lp.hi;
  for (int r = 0; r < mi; ++r) {
    cf.lo[n + r] = lp.lo_ineq[r];
    cf.hi[n + r] = lp.hi_ineq[r];
  }
  return cf;
}

// Split a canonical-space point and duals back into the public solution.
inline void fill_solution(const LinearProgram& lp, const VectorXd& v,
                          const VectorXd& y, const VectorXd& z_lo,
                          const VectorXd& z_hi, LPSolution& sol) {
  int n = lp.n_vars(), me = lp.n_eq(), mi = lp.n_ineq();
  sol.x = v.head(n);
  sol.obj = lp.c.dot(sol.x);
  sol.y_eq = y.head(me);
  sol.y_ineq = y.tail(mi);
  sol.z_lo = z_lo.head(n);
  sol.z_hi = z_hi.head(n);

  double dual = 0.0;
  if (me) dual += lp.b_eq.dot(sol.y_eq);
  for (int j = 0; j < n + mi; ++j) {
    double lo = j < n ? lp.lo[j] : lp.lo_ineq[j - n];
    double hi = j < n ? lp.hi[j] : lp.hi_ineq[j - n];
    if (lo > -kInf) dual += lo * z_lo[j];
    if (hi < kInf) dual -= hi * z_hi[j];
  }
  sol.duality_gap = std::abs(sol.obj - dual) / (1.0 + std::abs(sol.obj));
}

}  // namespace detail

struct KktReport {
  double primal = 0.0, dual = 0.0, comp = 0.0;
  double worst() const { return std::max({primal, dual, comp}); }
};

// Scaled KKT residuals of a claimed-optimal solution: equality/range/bound
// violations, the stationarity defect, and complementarity products.
inline KktReport kkt_residuals(const LinearProgram& lp, const LPSolution& s) {
  KktReport rep;
  int n = lp.n_vars();
  double bscale = 1.0;
  if (lp.n_eq()) bscale += lp.b_eq.cwiseAbs().maxCoeff();

  if (lp.n_eq())
    rep.primal = (lp.a_eq * s.x - lp.b_eq).cwiseAbs().maxCoeff() / bscale;
  VectorXd row = lp.n_ineq() ? VectorXd(lp.a_ineq * s.x) : VectorXd();
  for (int r = 0; r < lp.n_ineq(); ++r) {
    double scale = 1.0 + std::abs(row[r]);
    rep.primal = std::max(rep.primal,
                          std::max(lp.lo_ineq[r] - row[r], row[r] - lp.hi_ineq[r]) / scale);
  }
  for (int j = 0; j < n; ++j) {
    double scale = 1.0 + std::abs(s.x[j]);
    rep.primal = std::max(rep.primal,
                          std::max(lp.lo[j] - s.x[j], s.x[j] - lp.hi[j]) / scale);
  }
  rep.primal = std::max(rep.primal, 0.0);

  // Stationarity: c - A_eq'y - A_ineq'y_row - z_lo + z_hi = 0, with the row
  // dual acting through its constraint coefficients.
  VectorXd grad = lp.c;
  if (lp.n_eq()) grad -= lp.a_eq.transpose() * s.y_eq;
  if (lp.n_ineq()) grad -= lp.a_ineq.transpose() * s.y_ineq;
  grad -= s.z_lo;
  grad += s.z_hi;
  rep.dual = grad.cwiseAbs().maxCoeff() / (1.0 + lp.c.cwiseAbs().maxCoeff());

  double oscale = 1.0 + std::abs(s.obj);
  for (int j = 0; j < n; ++j) {
    if (lp.lo[j] > -kInf)
      rep.comp = std::max(rep.comp, s.z_lo[j] * (s.x[j] - lp.lo[j]) / oscale);
    if (lp.hi[j] < kInf)
      rep.comp = std::max(rep.comp, s.z_hi[j] * (lp.hi[j] - s.x[j]) / oscale);
  }
  for (int r = 0; r < lp.n_ineq(); ++r) {
    if (lp.lo_ineq[r] > -kInf)
      rep.comp = std::max(rep.comp, s.mu_min(r) * (row[r] - lp.lo_ineq[r]) / oscale);
    if (lp.hi_ineq[r] < kInf)
      rep.comp = std::max(rep.comp, s.mu_max(r) * (lp.hi_ineq[r] - row[r]) / oscale);
  }
  return rep;
}

// Plain-text rendering: objective, rows with their ranges, variable bounds.
inline std::string dump_lp(const LinearProgram& lp) {
  std::ostringstream os;
  auto term = [&](double a, int j) {
    os << (a < 0 ? " - " : " + ") << fmt6(std::abs(a)) << " " << lp.var_name(j);
  };
  os << "min";
  for (int j = 0; j < lp.n_vars(); ++j)
    if (lp.c[j] != 0.0) term(lp.c[j], j);
  os << "\n";
  for (int r = 0; r < lp.n_eq(); ++r) {
    os << "eq" << r << ":";
    for (int j = 0; j < lp.n_vars(); ++j)
      if (lp.a_eq(r, j) != 0.0) term(lp.a_eq(r, j), j);
    os << " = " << fmt6(lp.b_eq[r]) << "\n";
  }
  for (int r = 0; r < lp.n_ineq(); ++r) {
    os << "row" << r << ": " << fmt6(lp.lo_ineq[r]) << " <=";
    for (int j = 0; j < lp.n_vars(); ++j)
      if (lp.a_ineq(r, j) != 0.0) term(lp.a_ineq(r, j), j);
    os << " <= " << fmt6(lp.hi_ineq[r]) << "\n";
  }
  for (int j = 0; j < lp.n_vars(); ++j)
    os << lp.var_name(j) << " in [" << fmt6(lp.lo[j]) << ", " << fmt6(lp.hi[j])
       << "]\n";
  return os.str();
}

}  // namespace rbm
