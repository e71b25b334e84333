#pragma once

// Mehrotra predictor-corrector interior-point method on the bounded canonical
// form. Bound slacks are kept implicitly (g = x - lo, t = hi - x) so one-sided
// and free variables need no splitting. The augmented KKT system is solved
// densely with a fresh LU per iteration, reused for predictor and corrector.

#include "rbm/lp.hpp"
#include "rbm/simplex.hpp"

namespace rbm {

struct IpmParams {
  double feas_tol = 1e-8;
  double gap_tol = 1e-8;
  int max_iter = 200;
};

inline LPSolution solve_interior_point(const LinearProgram& lp,
                                       const IpmParams& params = {}) {
  lp.validate();
  detail::CanonicalLp cf = detail::canonicalize(lp);
  int n_all = static_cast<int>(cf.c.size());
  int m = static_cast<int>(cf.a.rows());

  // pinned variables (lo == hi) are substituted out
  std::vector<int> keep;
  VectorXd x_full = VectorXd::Zero(n_all);
  VectorXd b = cf.b;
  for (int j = 0; j < n_all; ++j) {
    if (cf.lo[j] == cf.hi[j]) {
      x_full[j] = cf.lo[j];
      b -= cf.a.col(j) * cf.lo[j];
    } else {
      keep.push_back(j);
    }
  }
  int n = static_cast<int>(keep.size());
  MatrixXd a(m, n);
  VectorXd c(n), lo(n), hi(n);
  for (int k = 0; k < n; ++k) {
    a.col(k) = cf.a.col(keep[k]);
    c[k] = cf.c[keep[k]];
    lo[k] = cf.lo[keep[k]];
    hi[k] = cf.hi[keep[k]];
  }

  std::vector<bool> has_lo(n), has_hi(n);
  int n_bounds = 0;
  for (int k = 0; k < n; ++k) {
    has_lo[k] = lo[k] > -kInf;
    has_hi[k] = hi[k] < kInf;
    n_bounds += has_lo[k] + has_hi[k];
  }

  // least-norm start pushed strictly inside the bounds
  VectorXd x(n);
  if (m > 0) {
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(a);
    x = cod.solve(b);
  } else {
    x.setZero();
  }
  for (int k = 0; k < n; ++k) {
    if (has_lo[k] && has_hi[k]) {
      double margin = std::min(0.35 * (hi[k] - lo[k]), 1.0);
      x[k] = std::clamp(x[k], lo[k] + margin, hi[k] - margin);
    } else if (has_lo[k]) {
      x[k] = std::max(x[k], lo[k] + 1.0);
    } else if (has_hi[k]) {
      x[k] = std::min(x[k], hi[k] - 1.0);
    }
  }
  VectorXd y = VectorXd::Zero(m);
  VectorXd z = VectorXd::Zero(n), w = VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    if (has_lo[k]) z[k] = 1.0;
    if (has_hi[k]) w[k] = 1.0;
  }

  LPSolution sol;
  double b_scale = 1.0 + (m > 0 ? b.cwiseAbs().maxCoeff() : 0.0);
  double c_scale = 1.0 + (n > 0 ? c.cwiseAbs().maxCoeff() : 0.0);
  bool converged = false;
  bool suspect_infeasible = false, suspect_unbounded = false;

  for (int iter = 0; iter < params.max_iter; ++iter) {
    VectorXd r_p = b - a * x;
    VectorXd r_d = c - a.transpose() * y - z + w;
    double comp = 0.0;
    for (int k = 0; k < n; ++k) {
      if (has_lo[k]) comp += (x[k] - lo[k]) * z[k];
      if (has_hi[k]) comp += (hi[k] - x[k]) * w[k];
    }
    double obj = c.dot(x);
    double dual_obj = b.dot(y);
    for (int k = 0; k < n; ++k) {
      if (has_lo[k]) dual_obj += lo[k] * z[k];
      if (has_hi[k]) dual_obj -= hi[k] * w[k];
    }
    sol.obj_history.push_back(obj);
    sol.dual_obj_history.push_back(dual_obj);
    double gap = comp / (1.0 + std::abs(obj));
    sol.gap_history.push_back(gap);
    sol.iterations = iter;

    double p_res = (m > 0 ? r_p.cwiseAbs().maxCoeff() : 0.0) / b_scale;
    double d_res = (n > 0 ? r_d.cwiseAbs().maxCoeff() : 0.0) / c_scale;
    if (p_res < params.feas_tol && d_res < params.feas_tol &&
        gap < params.gap_tol) {
      converged = true;
      break;
    }
    double mu = n_bounds > 0 ? comp / n_bounds : 0.0;
    if (n_bounds > 0 && mu < 1e-10 && p_res > 1e-6) {
      suspect_infeasible = true;
      break;
    }
    if (std::abs(obj) > 1e14) {
      suspect_unbounded = true;
      break;
    }

    VectorXd g = VectorXd::Ones(n), t = VectorXd::Ones(n);
    VectorXd d_diag = VectorXd::Zero(n);
    for (int k = 0; k < n; ++k) {
      if (has_lo[k]) {
        g[k] = x[k] - lo[k];
        d_diag[k] += z[k] / g[k];
      }
      if (has_hi[k]) {
        t[k] = hi[k] - x[k];
        d_diag[k] += w[k] / t[k];
      }
    }

    MatrixXd kkt = MatrixXd::Zero(n + m, n + m);
    const double reg = 1e-12;
    for (int k = 0; k < n; ++k) kkt(k, k) = -d_diag[k] - reg;
    kkt.topRightCorner(n, m) = a.transpose();
    kkt.bottomLeftCorner(m, n) = a;
    for (int i = 0; i < m; ++i) kkt(n + i, n + i) = reg;
    Eigen::PartialPivLU<MatrixXd> lu(kkt);

    auto solve_step = [&](const VectorXd& tz, const VectorXd& tw, VectorXd& dx,
                          VectorXd& dy, VectorXd& dz, VectorXd& dw) {
      VectorXd rhs(n + m);
      for (int k = 0; k < n; ++k) {
        double v = r_d[k] + (has_lo[k] ? z[k] - tz[k] / g[k] : 0.0) +
                   (has_hi[k] ? tw[k] / t[k] - w[k] : 0.0);
        rhs[k] = v;
      }
      rhs.tail(m) = r_p;
      VectorXd step = lu.solve(rhs);
      dx = step.head(n);
      dy = step.tail(m);
      dz.setZero(n);
      dw.setZero(n);
      for (int k = 0; k < n; ++k) {
        if (has_lo[k]) dz[k] = tz[k] / g[k] - z[k] - z[k] / g[k] * dx[k];
        if (has_hi[k]) dw[k] = tw[k] / t[k] - w[k] + w[k] / t[k] * dx[k];
      }
    };

    auto max_steps = [&](const VectorXd& dx, const VectorXd& dz,
                         const VectorXd& dw, double& ap, double& ad) {
      ap = ad = 1.0;
      for (int k = 0; k < n; ++k) {
        if (has_lo[k] && dx[k] < 0.0) ap = std::min(ap, g[k] / -dx[k]);
        if (has_hi[k] && dx[k] > 0.0) ap = std::min(ap, t[k] / dx[k]);
        if (has_lo[k] && dz[k] < 0.0) ad = std::min(ad, z[k] / -dz[k]);
        if (has_hi[k] && dw[k] < 0.0) ad = std::min(ad, w[k] / -dw[k]);
      }
    };

    VectorXd zero_t = VectorXd::Zero(n);
    VectorXd dx_a, dy_a, dz_a, dw_a;
    solve_step(zero_t, zero_t, dx_a, dy_a, dz_a, dw_a);
    double ap_a, ad_a;
    max_steps(dx_a, dz_a, dw_a, ap_a, ad_a);

    double sigma = 0.0;
    if (n_bounds > 0 && mu > 0.0) {
      double mu_aff = 0.0;
      for (int k = 0; k < n; ++k) {
        if (has_lo[k])
          mu_aff += (g[k] + ap_a * dx_a[k]) * (z[k] + ad_a * dz_a[k]);
        if (has_hi[k])
          mu_aff += (t[k] - ap_a * dx_a[k]) * (w[k] + ad_a * dw_a[k]);
      }
      mu_aff /= n_bounds;
      sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);
    }

    VectorXd tz(n), tw(n);
    for (int k = 0; k < n; ++k) {
      tz[k] = sigma * mu - dx_a[k] * dz_a[k];
      tw[k] = sigma * mu + dx_a[k] * dw_a[k];
    }
    VectorXd dx, dy, dz, dw;
    solve_step(tz, tw, dx, dy, dz, dw);
    double ap, ad;
    max_steps(dx, dz, dw, ap, ad);
    ap = std::min(1.0, 0.9995 * ap);
    ad = std::min(1.0, 0.9995 * ad);

    x += ap * dx;
    y += ad * dy;
    z += ad * dz;
    w += ad * dw;
  }

  if (!converged) {
    // the iterates no longer certify anything; classify by the exact solver
    LPSolution probe = solve_simplex(lp);
    if (probe.status == LpStatus::Infeasible ||
        probe.status == LpStatus::Unbounded) {
      sol.status = probe.status;
      return sol;
    }
    (void)suspect_infeasible;
    (void)suspect_unbounded;
    sol.status = LpStatus::IterationLimit;
    return sol;
  }

  VectorXd z_lo = VectorXd::Zero(n_all), z_hi = VectorXd::Zero(n_all);
  for (int k = 0; k < n; ++k) {
    x_full[keep[k]] = x[k];
    if (has_lo[k]) z_lo[keep[k]] = z[k];
    if (has_hi[k]) z_hi[keep[k]] = w[k];
  }
  for (int j = 0; j < n_all; ++j) {
    if (cf.lo[j] == cf.hi[j]) {
      double rc = cf.c[j] - cf.a.col(j).dot(y);
      z_lo[j] = std::max(rc, 0.0);
      z_hi[j] = std::max(-rc, 0.0);
    }
  }
  detail::fill_solution(lp, x_full, y, z_lo, z_hi, sol);
  sol.status = LpStatus::Optimal;
  return sol;
}

}  // namespace rbm
