#pragma once

// Linearization artifacts at an operating point. The dispatch correction
// problems are linear programs built from these: the inverse-reactance matrix
// behind the angle rows, incremental loss sensitivities, DC shift factors for
// branch limits, and the voltage-correction susceptance and tap sensitivities
// behind the reactive problem.

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rbm/powerflow.hpp"

namespace rbm {

// One linear segment of a branch loss curve at the operating point.
struct LossSegment {
  double p_mw = 0.0;     // sending-end flow at the point
  double loss_mw = 0.0;  // branch loss at the point
  double slope = 0.0;    // d(loss) / d(sending-end flow)
};

struct SensitivityBundle {
  MatrixXd bprime;        // (n-1)x(n-1) inverse-reactance matrix, slack removed
  MatrixXd bprime_full;   // n x n unreduced form
  MatrixXd bdoubleprime;  // PQ-bus block of the voltage-correction matrix
  MatrixXd bsus_full;     // n x n, -imag(Ybus) at the current taps
  VectorXd loss_sens;     // dLoss/dP per bus, slack entry exactly 0
  MatrixXd flow_sens;     // branches x buses, slack column exactly 0
  MatrixXd tap_sens;      // buses x transformers, p.u. Q per unit tap
  std::vector<int> transformer_branches;  // branch positions, tap column order
  std::vector<int> pq_buses;              // bus positions behind bdoubleprime
  std::vector<LossSegment> loss_model;    // one segment per branch
};

// Unreduced inverse-reactance matrix: off-diagonal -1/x summed over parallel
// branches, diagonal the negated row sum. Taps and resistance play no part.
inline MatrixXd build_bprime(const NetworkCase& nc) {
  int n = nc.n_buses();
  MatrixXd b = MatrixXd::Zero(n, n);
  for (const Branch& br : nc.branches) {
    if (br.x == 0.0) throw std::invalid_argument("zero-reactance branch");
    int f = nc.bus_index(br.from_bus), t = nc.bus_index(br.to_bus);
    double w = 1.0 / br.x;
    b(f, t) -= w;
    b(t, f) -= w;
    b(f, f) += w;
    b(t, t) += w;
  }
  return b;
}

inline MatrixXd drop_bus(const MatrixXd& m, int pos) {
  int n = static_cast<int>(m.rows());
  MatrixXd r(n - 1, n - 1);
  for (int i = 0, a = 0; i < n; ++i) {
    if (i == pos) continue;
    for (int j = 0, b = 0; j < n; ++j) {
      if (j == pos) continue;
      r(a, b++) = m(i, j);
    }
    ++a;
  }
  return r;
}

inline MatrixXd build_bprime_reduced(const NetworkCase& nc) {
  return drop_bus(build_bprime(nc), nc.slack_index());
}

namespace detail {

// Reduced mismatch system at a solved state: unknowns are angles at non-slack
// buses and magnitudes at load buses, rows are the matching P and Q
// mismatches. `lu_t` factors the transpose, so sensitivities of any quantity
// g(x) to the specified injections come from one solve of J' w = grad g.
struct ReducedSystem {
  std::vector<int> th_vars, v_vars;
  std::vector<int> p_row;  // bus position -> P-mismatch row, -1 for slack
  VectorXd slack_grad;     // gradient of the slack injection over the state
  Eigen::PartialPivLU<MatrixXd> lu_t;
};

inline ReducedSystem reduce_at(const NetworkCase& nc, const MatrixXcd& Y,
                               const PowerFlowSolution& pf) {
  int n = nc.n_buses();
  int slack = nc.slack_index();

  VectorXd p, q;
  calc_injections(Y, pf.v, pf.theta, p, q);
  MatrixXd dp_dth, dp_dv, dq_dth, dq_dv;
  nr_jacobian_full(Y, pf.v, pf.theta, p, q, dp_dth, dp_dv, dq_dth, dq_dv);

  ReducedSystem rs;
  rs.p_row.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    if (i != slack) {
      rs.p_row[i] = static_cast<int>(rs.th_vars.size());
      rs.th_vars.push_back(i);
    }
    if (!nc.buses[i].has_gen) rs.v_vars.push_back(i);
  }
  int nth = static_cast<int>(rs.th_vars.size());
  int nv = static_cast<int>(rs.v_vars.size());

  MatrixXd J(nth + nv, nth + nv);
  for (int a = 0; a < nth; ++a) {
    for (int b = 0; b < nth; ++b)
      J(a, b) = dp_dth(rs.th_vars[a], rs.th_vars[b]);
    for (int b = 0; b < nv; ++b)
      J(a, nth + b) = dp_dv(rs.th_vars[a], rs.v_vars[b]);
  }
  for (int a = 0; a < nv; ++a) {
    for (int b = 0; b < nth; ++b)
      J(nth + a, b) = dq_dth(rs.v_vars[a], rs.th_vars[b]);
    for (int b = 0; b < nv; ++b)
      J(nth + a, nth + b) = dq_dv(rs.v_vars[a], rs.v_vars[b]);
  }
  rs.slack_grad.resize(nth + nv);
  for (int a = 0; a < nth; ++a) rs.slack_grad[a] = dp_dth(slack, rs.th_vars[a]);
  for (int a = 0; a < nv; ++a)
    rs.slack_grad[nth + a] = dp_dv(slack, rs.v_vars[a]);
  rs.lu_t.compute(J.transpose());
  return rs;
}

}  // namespace detail

// Sensitivity of total losses to an extra injection at each bus with the
// slack compensating. Transpose-Jacobian at the solved state: with the
// reduced mismatch Jacobian J and g the gradient of the slack injection over
// the state, solve J' w = g; then dLoss/dP_i = 1 + w_i on the active power
// rows. Exact at the operating point; the slack entry is 0 by definition.
inline VectorXd loss_sensitivities(const NetworkCase& nc,
                                   const PowerFlowSolution& pf,
                                   const std::vector<double>* taps = nullptr) {
  MatrixXcd Y = build_ybus(nc, taps);
  detail::ReducedSystem rs = detail::reduce_at(nc, Y, pf);
  VectorXd w = rs.lu_t.solve(rs.slack_grad);
  if (!w.allFinite())
    throw std::runtime_error("singular Jacobian in loss sensitivities");

  VectorXd s = VectorXd::Zero(nc.n_buses());
  for (size_t a = 0; a < rs.th_vars.size(); ++a)
    s[rs.th_vars[a]] = 1.0 + w[a];
  return s;
}

// Flow change on each branch per extra MW injected at each bus, withdrawn at
// the slack: the exact first-order derivative of the sending-end flows at the
// solved state, via the transposed mismatch Jacobian. Rows follow branch
// positions, sending-end orientation; the slack column is zero.
inline MatrixXd flow_sensitivities(const NetworkCase& nc,
                                   const PowerFlowSolution& pf,
                                   const std::vector<double>* taps = nullptr) {
  int n = nc.n_buses();
  MatrixXcd Y = build_ybus(nc, taps);
  detail::ReducedSystem rs = detail::reduce_at(nc, Y, pf);
  int nth = static_cast<int>(rs.th_vars.size());
  int nv = static_cast<int>(rs.v_vars.size());

  std::vector<int> th_pos(n, -1), v_pos(n, -1);  // bus -> unknown index
  for (int a = 0; a < nth; ++a) th_pos[rs.th_vars[a]] = a;
  for (int a = 0; a < nv; ++a) v_pos[rs.v_vars[a]] = nth + a;

  MatrixXd gsf = MatrixXd::Zero(nc.n_branches(), n);
  VectorXd g(nth + nv);
  for (int l = 0; l < nc.n_branches(); ++l) {
    const Branch& br = nc.branches[l];
    int f = nc.bus_index(br.from_bus), t = nc.bus_index(br.to_bus);
    double tap = br.is_transformer ? (taps ? (*taps)[l] : br.tap) : 1.0;
    cplx y = 1.0 / cplx(br.r, br.x);
    cplx ysh(0.0, br.b_shunt / 2.0);
    cplx B = -y / tap;
    double a_re = ((y + ysh) / (tap * tap)).real();
    double th = pf.theta[f] - pf.theta[t];
    double trig = B.real() * std::cos(th) + B.imag() * std::sin(th);
    double trig_d = -B.real() * std::sin(th) + B.imag() * std::cos(th);
    double vf = pf.v[f], vt = pf.v[t];

    // p_from = a_re vf^2 + vf vt (Re B cos + Im B sin), partials over the state
    g.setZero();
    if (th_pos[f] >= 0) g[th_pos[f]] += vf * vt * trig_d;
    if (th_pos[t] >= 0) g[th_pos[t]] -= vf * vt * trig_d;
    if (v_pos[f] >= 0) g[v_pos[f]] += 2.0 * a_re * vf + vt * trig;
    if (v_pos[t] >= 0) g[v_pos[t]] += vf * trig;

    VectorXd w = rs.lu_t.solve(g);
    if (!w.allFinite())
      throw std::runtime_error("singular Jacobian in flow sensitivities");
    for (int i = 0; i < n; ++i)
      if (rs.p_row[i] >= 0) gsf(l, i) = w[rs.p_row[i]];
  }
  return gsf;
}

// PQ-bus block of the voltage-correction matrix: -imag(Ybus), so shunts, line
// charging and current tap positions all count. Positive diagonal.
inline MatrixXd build_bdoubleprime(const NetworkCase& nc,
                                   const std::vector<double>* taps = nullptr) {
  MatrixXd b = -build_ybus(nc, taps).imag();
  std::vector<int> pq;
  for (int i = 0; i < nc.n_buses(); ++i)
    if (!nc.buses[i].has_gen) pq.push_back(i);
  MatrixXd r(pq.size(), pq.size());
  for (size_t a = 0; a < pq.size(); ++a)
    for (size_t b2 = 0; b2 < pq.size(); ++b2) r(a, b2) = b(pq[a], pq[b2]);
  return r;
}

// dQ_i/dt_k at the solved state, holding voltages and angles: differentiate
// the transformer admittance stamps. Only the two terminal buses of each
// transformer pick up entries. Values in p.u. reactive per unit tap.
inline MatrixXd tap_sensitivities(const NetworkCase& nc,
                                  const PowerFlowSolution& pf,
                                  const std::vector<double>* taps = nullptr) {
  int n = nc.n_buses();
  std::vector<int> xfmr;
  for (int l = 0; l < nc.n_branches(); ++l)
    if (nc.branches[l].is_transformer) xfmr.push_back(l);

  MatrixXd sens = MatrixXd::Zero(n, static_cast<int>(xfmr.size()));
  for (size_t k = 0; k < xfmr.size(); ++k) {
    const Branch& br = nc.branches[xfmr[k]];
    int f = nc.bus_index(br.from_bus), t = nc.bus_index(br.to_bus);
    double tap = taps ? (*taps)[xfmr[k]] : br.tap;
    cplx y = 1.0 / cplx(br.r, br.x);
    cplx ysh(0.0, br.b_shunt / 2.0);
    cplx dyff = -2.0 * (y + ysh) / (tap * tap * tap);
    cplx dyft = y / (tap * tap);
    cplx vf = std::polar(pf.v[f], pf.theta[f]);
    cplx vt = std::polar(pf.v[t], pf.theta[t]);
    cplx dsf = vf * std::conj(dyff * vf + dyft * vt);
    cplx dst = vt * std::conj(dyft * vf);
    sens(f, static_cast<int>(k)) = dsf.imag();
    sens(t, static_cast<int>(k)) = dst.imag();
  }
  return sens;
}

inline SensitivityBundle build_sensitivities(
    const NetworkCase& nc, const PowerFlowSolution& pf,
    const std::vector<double>* taps = nullptr) {
  SensitivityBundle sb;
  sb.bprime_full = build_bprime(nc);
  sb.bprime = drop_bus(sb.bprime_full, nc.slack_index());
  sb.bsus_full = -build_ybus(nc, taps).imag();
  sb.bdoubleprime = build_bdoubleprime(nc, taps);
  sb.loss_sens = loss_sensitivities(nc, pf, taps);
  sb.flow_sens = flow_sensitivities(nc, pf, taps);
  sb.tap_sens = tap_sensitivities(nc, pf, taps);
  for (int l = 0; l < nc.n_branches(); ++l)
    if (nc.branches[l].is_transformer) sb.transformer_branches.push_back(l);
  for (int i = 0; i < nc.n_buses(); ++i)
    if (!nc.buses[i].has_gen) sb.pq_buses.push_back(i);

  sb.loss_model.resize(nc.n_branches());
  for (int l = 0; l < nc.n_branches(); ++l) {
    const Branch& br = nc.branches[l];
    int f = nc.bus_index(br.from_bus);
    LossSegment seg;
    seg.p_mw = pf.flow_p_from_mw[l];
    seg.loss_mw = pf.flow_p_from_mw[l] + pf.flow_p_to_mw[l];
    double vf = pf.v[f];
    seg.slope = 2.0 * br.r * nc.to_pu(seg.p_mw) / (vf * vf);
    sb.loss_model[l] = seg;
  }
  return sb;
}

}  // namespace rbm
