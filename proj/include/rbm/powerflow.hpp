#pragma once

// Full Newton-Raphson AC power flow in polar coordinates. Gives the operating
// point that the dispatch correction problems linearize around, and re-checks
// the network after corrections are applied.

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "rbm/netmodel.hpp"

namespace rbm {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using cplx = std::complex<double>;

// Net scheduled injections per bus position, generation minus load.
struct Injections {
  std::vector<double> p_mw;
  std::vector<double> q_mvar;
};

struct PfOptions {
  double tol = 1e-6;   // p.u. mismatch, infinity norm
  int max_iter = 30;
  std::vector<double> v0;      // warm-start voltage magnitudes (optional)
  std::vector<double> theta0;  // warm-start angles (optional)
  std::vector<double> taps;    // per-branch tap override (optional)
  std::vector<double> v_set;   // per-bus setpoint override (optional)
};

struct PowerFlowSolution {
  bool converged = false;
  int iterations = 0;
  VectorXd v;            // p.u.
  VectorXd theta;        // rad
  VectorXd p_inj_mw;     // realized net injection
  VectorXd q_inj_mvar;
  VectorXd flow_p_from_mw;  // sending end, per branch position
  VectorXd flow_q_from_mvar;
  VectorXd flow_p_to_mw;    // receiving end (negative of delivered)
  VectorXd flow_q_to_mvar;
  double total_loss_mw = 0.0;
  std::vector<double> mismatch_history;  // infinity norm per iteration
};

inline MatrixXcd build_ybus(const NetworkCase& nc,
                            const std::vector<double>* taps = nullptr) {
  int n = nc.n_buses();
  MatrixXcd Y = MatrixXcd::Zero(n, n);
  for (int l = 0; l < nc.n_branches(); ++l) {
    const Branch& br = nc.branches[l];
    int f = nc.bus_index(br.from_bus), t = nc.bus_index(br.to_bus);
    cplx y = 1.0 / cplx(br.r, br.x);
    cplx ysh(0.0, br.b_shunt / 2.0);
    double tap = br.is_transformer ? (taps ? (*taps)[l] : br.tap) : 1.0;
    Y(f, f) += (y + ysh) / (tap * tap);
    Y(f, t) -= y / tap;
    Y(t, f) -= y / tap;
    Y(t, t) += y + ysh;
  }
  for (int i = 0; i < n; ++i)
    if (nc.buses[i].shunt_b != 0.0) Y(i, i) += cplx(0.0, nc.buses[i].shunt_b);
  return Y;
}

// P_i(V, theta) and Q_i(V, theta) for all buses, p.u.
inline void calc_injections(const MatrixXcd& Y, const VectorXd& v,
                            const VectorXd& theta, VectorXd& p, VectorXd& q) {
  int n = static_cast<int>(v.size());
  p.resize(n);
  q.resize(n);
  for (int i = 0; i < n; ++i) {
    cplx s = 0.0;
    for (int k = 0; k < n; ++k) {
      if (Y(i, k) == cplx(0.0, 0.0)) continue;
      double th = theta[i] - theta[k];
      s += v[i] * v[k] * std::polar(1.0, th) * std::conj(Y(i, k));
    }
    p[i] = s.real();
    q[i] = s.imag();
  }
}

// Blocks of the polar power-flow Jacobian at (v, theta):
//   dP/dtheta, dP/dV, dQ/dtheta, dQ/dV over ALL buses (callers slice).
inline void nr_jacobian_full(const MatrixXcd& Y, const VectorXd& v,
                             const VectorXd& theta, const VectorXd& p,
                             const VectorXd& q, MatrixXd& dp_dth,
                             MatrixXd& dp_dv, MatrixXd& dq_dth,
                             MatrixXd& dq_dv) {
  int n = static_cast<int>(v.size());
  dp_dth.setZero(n, n);
  dp_dv.setZero(n, n);
  dq_dth.setZero(n, n);
  dq_dv.setZero(n, n);
  for (int i = 0; i < n; ++i) {
    double gii = Y(i, i).real(), bii = Y(i, i).imag();
    dp_dth(i, i) = -q[i] - bii * v[i] * v[i];
    dp_dv(i, i) = p[i] / v[i] + gii * v[i];
    dq_dth(i, i) = p[i] - gii * v[i] * v[i];
    dq_dv(i, i) = q[i] / v[i] - bii * v[i];
    for (int k = 0; k < n; ++k) {
      if (k == i || Y(i, k) == cplx(0.0, 0.0)) continue;
      double g = Y(i, k).real(), b = Y(i, k).imag();
      double th = theta[i] - theta[k];
      double c = std::cos(th), s = std::sin(th);
      dp_dth(i, k) = v[i] * v[k] * (g * s - b * c);
      dp_dv(i, k) = v[i] * (g * c + b * s);
      dq_dth(i, k) = -v[i] * v[k] * (g * c + b * s);
      dq_dv(i, k) = v[i] * (g * s - b * c);
    }
  }
}

namespace detail {

inline void branch_flows(const NetworkCase& nc, const std::vector<double>* taps,
                         const VectorXd& v, const VectorXd& theta,
                         PowerFlowSolution& sol) {
  int m = nc.n_branches();
  sol.flow_p_from_mw.resize(m);
  sol.flow_q_from_mvar.resize(m);
  sol.flow_p_to_mw.resize(m);
  sol.flow_q_to_mvar.resize(m);
  for (int l = 0; l < m; ++l) {
    const Branch& br = nc.branches[l];
    int f = nc.bus_index(br.from_bus), t = nc.bus_index(br.to_bus);
    cplx y = 1.0 / cplx(br.r, br.x);
    cplx ysh(0.0, br.b_shunt / 2.0);
    double tap = br.is_transformer ? (taps && !taps->empty() ? (*taps)[l] : br.tap)
                                   : 1.0;
    cplx vf = std::polar(v[f], theta[f]);
    cplx vt = std::polar(v[t], theta[t]);
    cplx i_f = (y + ysh) / (tap * tap) * vf - y / tap * vt;
    cplx i_t = (y + ysh) * vt - y / tap * vf;
    cplx sf = vf * std::conj(i_f);
    cplx st = vt * std::conj(i_t);
    sol.flow_p_from_mw[l] = nc.from_pu(sf.real());
    sol.flow_q_from_mvar[l] = nc.from_pu(sf.imag());
    sol.flow_p_to_mw[l] = nc.from_pu(st.real());
    sol.flow_q_to_mvar[l] = nc.from_pu(st.imag());
  }
}

}  // namespace detail

// Newton-Raphson solve. Buses with a machine hold their setpoint voltage (no
// limit switching here; reactive limits are the Q correction problem's job).
inline PowerFlowSolution solve_power_flow(const NetworkCase& nc,
                                          const Injections& inj,
                                          const PfOptions& opt = {}) {
  int n = nc.n_buses();
  int slack = nc.slack_index();
  const std::vector<double>* taps = opt.taps.empty() ? nullptr : &opt.taps;
  MatrixXcd Y = build_ybus(nc, taps);

  auto v_setpoint = [&](int i) {
    if (!opt.v_set.empty()) return opt.v_set[i];
    return nc.buses[i].v_set;
  };

  VectorXd v(n), theta(n);
  for (int i = 0; i < n; ++i) {
    bool regulated = nc.buses[i].has_gen;
    v[i] = !opt.v0.empty() ? opt.v0[i] : (regulated ? v_setpoint(i) : 1.0);
    if (regulated) v[i] = v_setpoint(i);  // setpoints win over warm start
    theta[i] = !opt.theta0.empty() ? opt.theta0[i] : 0.0;
  }
  theta[slack] = 0.0;

  std::vector<int> th_vars, v_vars;  // bus positions per unknown
  for (int i = 0; i < n; ++i) {
    if (i != slack) th_vars.push_back(i);
    if (!nc.buses[i].has_gen) v_vars.push_back(i);
  }
  int nth = static_cast<int>(th_vars.size());
  int nv = static_cast<int>(v_vars.size());

  VectorXd p_spec(n), q_spec(n);
  for (int i = 0; i < n; ++i) {
    p_spec[i] = nc.to_pu(inj.p_mw[i]);
    q_spec[i] = nc.to_pu(inj.q_mvar[i]);
  }

  PowerFlowSolution sol;
  VectorXd p, q;
  MatrixXd dp_dth, dp_dv, dq_dth, dq_dv;
  for (int it = 0; it <= opt.max_iter; ++it) {
    calc_injections(Y, v, theta, p, q);
    VectorXd mis(nth + nv);
    for (int a = 0; a < nth; ++a) mis[a] = p_spec[th_vars[a]] - p[th_vars[a]];
    for (int b = 0; b < nv; ++b)
      mis[nth + b] = q_spec[v_vars[b]] - q[v_vars[b]];
    double norm = mis.size() ? mis.cwiseAbs().maxCoeff() : 0.0;
    sol.mismatch_history.push_back(norm);
    if (norm < opt.tol) {
      sol.converged = true;
      sol.iterations = it;
      break;
    }
    if (it == opt.max_iter) {
      sol.iterations = it;
      break;
    }

    nr_jacobian_full(Y, v, theta, p, q, dp_dth, dp_dv, dq_dth, dq_dv);
    MatrixXd J(nth + nv, nth + nv);
    for (int a = 0; a < nth; ++a) {
      for (int b = 0; b < nth; ++b) J(a, b) = dp_dth(th_vars[a], th_vars[b]);
      for (int b = 0; b < nv; ++b)
        J(a, nth + b) = dp_dv(th_vars[a], v_vars[b]);
    }
    for (int a = 0; a < nv; ++a) {
      for (int b = 0; b < nth; ++b)
        J(nth + a, b) = dq_dth(v_vars[a], th_vars[b]);
      for (int b = 0; b < nv; ++b)
        J(nth + a, nth + b) = dq_dv(v_vars[a], v_vars[b]);
    }

    Eigen::PartialPivLU<MatrixXd> lu(J);
    VectorXd dx = lu.solve(mis);
    if (!dx.allFinite()) {
      sol.iterations = it;
      break;  // singular Jacobian: report non-convergence
    }
    for (int a = 0; a < nth; ++a) theta[th_vars[a]] += dx[a];
    for (int b = 0; b < nv; ++b) v[v_vars[b]] += dx[nth + b];
  }

  sol.v = v;
  sol.theta = theta;
  calc_injections(Y, v, theta, p, q);
  sol.p_inj_mw.resize(n);
  sol.q_inj_mvar.resize(n);
  for (int i = 0; i < n; ++i) {
    sol.p_inj_mw[i] = nc.from_pu(p[i]);
    sol.q_inj_mvar[i] = nc.from_pu(q[i]);
  }
  sol.total_loss_mw = sol.p_inj_mw.sum();
  detail::branch_flows(nc, taps, v, theta, sol);
  return sol;
}

// Sending/receiving-end flows of one branch, MW and MVAr.
struct BranchFlow {
  double p_from, p_to, q_from, q_to;
};

inline BranchFlow branch_flow(const PowerFlowSolution& sol, int branch_pos) {
  return {sol.flow_p_from_mw[branch_pos], sol.flow_p_to_mw[branch_pos],
          sol.flow_q_from_mvar[branch_pos], sol.flow_q_to_mvar[branch_pos]};
}

// Scheduled base-point injections: participant base points net of case loads.
// A consumer participant's base point is already part of the bus load, so only
// generator-side p0 adds in.
inline Injections schedule_injections(const NetworkCase& nc,
                                      const MarketData& md) {
  Injections inj;
  inj.p_mw.assign(nc.n_buses(), 0.0);
  inj.q_mvar.assign(nc.n_buses(), 0.0);
  for (int i = 0; i < nc.n_buses(); ++i) {
    inj.p_mw[i] = -nc.buses[i].load_p;
    inj.q_mvar[i] = -nc.buses[i].load_q;
  }
  for (const auto& p : md.participants)
    if (p.side == Side::Generator) {
      inj.p_mw[nc.bus_index(p.bus)] += p.p0;
      inj.q_mvar[nc.bus_index(p.bus)] += p.q0;
    }
  return inj;
}

// System-wide load change allocated per bus shares: consumption rises, so the
// net injection falls.
inline void apply_load_change(Injections& inj, const std::vector<double>& eta,
                              double delta_p_sys_mw) {
  for (size_t i = 0; i < inj.p_mw.size(); ++i)
    inj.p_mw[i] -= eta[i] * delta_p_sys_mw;
}

}  // namespace rbm
