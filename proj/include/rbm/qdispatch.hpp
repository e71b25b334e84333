#pragma once

// Reactive-power sub-problem: clears reactive support and transformer tap
// moves against the decoupled Q-V balance so every bus voltage returns inside
// its band. Linearized at the current operating point; voltages enter as
// deviation variables whose bounds encode the violated band directly.

#include "rbm/lp.hpp"
#include "rbm/netmodel.hpp"
#include "rbm/powerflow.hpp"
#include "rbm/sensitivity.hpp"

namespace rbm {

inline constexpr double kTapStep = 0.00625;
inline constexpr double kQReg = 1e-4;    // $/MVArh tie-break on free capability
inline constexpr double kVSlackPu = 1e-3;  // voltage band tolerance, p.u.

struct QVar {
  enum class Kind { QPlus, QMinus, TapUp, TapDown, DeltaV };
  Kind kind;
  int owner = -1;  // participant index, tap-bid index, or bus position
};

struct QModel {
  LinearProgram lp;
  std::vector<QVar> vars;
  std::vector<int> bus_row;  // bus pos -> balance row, -1 at slack
  std::vector<int> tap_branch;  // tap-bid index -> branch pos
  double base_mva = 100.0;
  int n_participants = 0;
};

struct QDispatch {
  std::vector<double> dq_plus_mvar, dq_minus_mvar;  // per participant
  std::vector<double> dt_plus, dt_minus;            // per tap bid, ratio
  VectorXd dv;       // p.u., per bus (slack 0)
  VectorXd q_price;  // $/MVArh, per bus (slack 0)
  double total_cost = 0.0;
  LPSolution raw;
};

inline QModel build_q_subproblem(const NetworkCase& nc,
                                 const PowerFlowSolution& pf,
                                 const MarketData& md,
                                 const SensitivityBundle& sens) {
  int n = nc.n_buses();
  int slack = nc.slack_index();
  double base = nc.base_mva;
  QModel m;
  m.base_mva = base;
  m.n_participants = static_cast<int>(md.participants.size());

  std::vector<std::string> names;
  auto add_var = [&](QVar::Kind k, int owner, double cost, double lo,
                     double hi, const std::string& name) {
    m.vars.push_back({k, owner});
    names.push_back(name);
    int j = static_cast<int>(names.size());
    m.lp.c.conservativeResize(j);
    m.lp.lo.conservativeResize(j);
    m.lp.hi.conservativeResize(j);
    m.lp.c[j - 1] = cost;
    m.lp.lo[j - 1] = lo;
    m.lp.hi[j - 1] = hi;
    return j - 1;
  };

  std::vector<int> qp_var(md.participants.size(), -1),
      qm_var(md.participants.size(), -1);
  for (size_t p = 0; p < md.participants.size(); ++p) {
    const Participant& pa = md.participants[p];
    int bpos = nc.bus_index(pa.bus);
    if (bpos == slack) continue;  // the slack machine balances implicitly
    double up = std::max(0.0, pa.q_max - pa.q0) / base;
    double dn = std::max(0.0, pa.q0 - pa.q_min) / base;
    double wp = (pa.bids.w_plus ? *pa.bids.w_plus : 0.0) + kQReg;
    double wm = (pa.bids.w_minus ? *pa.bids.w_minus : 0.0) + kQReg;
    if (up > 0.0)
      qp_var[p] = add_var(QVar::Kind::QPlus, static_cast<int>(p), wp * base,
                          0.0, up, pa.name + ".dq+");
    if (dn > 0.0)
      qm_var[p] = add_var(QVar::Kind::QMinus, static_cast<int>(p), wm * base,
                          0.0, dn, pa.name + ".dq-");
  }
  std::vector<int> tu_var(md.tap_bids.size(), -1),
      td_var(md.tap_bids.size(), -1);
  m.tap_branch.assign(md.tap_bids.size(), -1);
  for (size_t k = 0; k < md.tap_bids.size(); ++k) {
    const TapBid& tb = md.tap_bids[k];
    int l = nc.branch_index(tb.branch);
    m.tap_branch[k] = l;
    const Branch& br = nc.branches[l];
    double cost = tb.price / kTapStep;
    std::string id = "t" + std::to_string(tb.branch);
    if (br.tap_max - br.tap > 0.0)
      tu_var[k] = add_var(QVar::Kind::TapUp, static_cast<int>(k), cost, 0.0,
                          br.tap_max - br.tap, id + ".up");
    if (br.tap - br.tap_min > 0.0)
      td_var[k] = add_var(QVar::Kind::TapDown, static_cast<int>(k), cost, 0.0,
                          br.tap - br.tap_min, id + ".down");
  }

  bool violated = false;
  for (int i = 0; i < n; ++i)
    violated = violated || pf.v[i] < nc.buses[i].v_min - kVSlackPu ||
               pf.v[i] > nc.buses[i].v_max + kVSlackPu;
  if (violated && m.vars.empty())
    throw std::runtime_error(
        "voltage violation with no reactive resources offered");

  std::vector<int> dv_var(n, -1);
  for (int i = 0; i < n; ++i) {
    if (i == slack) continue;
    double lo = nc.buses[i].v_min - pf.v[i];
    double hi = nc.buses[i].v_max - pf.v[i];
    // a band exit inside the outer-loop voltage tolerance is treated as held
    if (lo > 0.0 && lo <= kVSlackPu) lo = 0.0;
    if (hi < 0.0 && hi >= -kVSlackPu) hi = 0.0;
    dv_var[i] = add_var(QVar::Kind::DeltaV, i, 0.0, lo, hi,
                        "dv." + std::to_string(nc.buses[i].id));
  }
  m.lp.names = std::move(names);
  int nv = m.lp.n_vars();

  // decoupled reactive balance at every held bus: injected support equals the
  // network's response to voltage and tap movement
  m.lp.a_eq = MatrixXd::Zero(n - 1, nv);
  m.lp.b_eq = VectorXd::Zero(n - 1);
  m.lp.a_ineq = MatrixXd::Zero(0, nv);
  m.lp.lo_ineq = VectorXd::Zero(0);
  m.lp.hi_ineq = VectorXd::Zero(0);
  m.bus_row.assign(n, -1);
  int r = 0;
  for (int i = 0; i < n; ++i) {
    if (i == slack) continue;
    m.bus_row[i] = r;
    for (int j = 0; j < n; ++j)
      if (dv_var[j] >= 0 && sens.bsus_full(i, j) != 0.0)
        m.lp.a_eq(r, dv_var[j]) = -sens.bsus_full(i, j);
    for (size_t k = 0; k < md.tap_bids.size(); ++k) {
      int col = -1;
      for (size_t c = 0; c < sens.transformer_branches.size(); ++c)
        if (sens.transformer_branches[c] == m.tap_branch[k])
          col = static_cast<int>(c);
      if (col < 0) continue;
      double ts = sens.tap_sens(i, col);
      if (tu_var[k] >= 0) m.lp.a_eq(r, tu_var[k]) -= ts;
      if (td_var[k] >= 0) m.lp.a_eq(r, td_var[k]) += ts;
    }
    ++r;
  }
  for (size_t p = 0; p < md.participants.size(); ++p) {
    int bpos = nc.bus_index(md.participants[p].bus);
    if (m.bus_row[bpos] < 0) continue;
    if (qp_var[p] >= 0) m.lp.a_eq(m.bus_row[bpos], qp_var[p]) = 1.0;
    if (qm_var[p] >= 0) m.lp.a_eq(m.bus_row[bpos], qm_var[p]) = -1.0;
  }
  m.lp.validate();
  return m;
}

inline QDispatch extract_q_dispatch(const QModel& m, const LPSolution& s) {
  if (s.status != LpStatus::Optimal)
    throw std::runtime_error(std::string("reactive sub-problem is ") +
                             to_string(s.status));
  int n = static_cast<int>(m.bus_row.size());
  double base = m.base_mva;
  QDispatch d;
  d.raw = s;
  d.dq_plus_mvar.assign(m.n_participants, 0.0);
  d.dq_minus_mvar.assign(m.n_participants, 0.0);
  d.dt_plus.assign(m.tap_branch.size(), 0.0);
  d.dt_minus.assign(m.tap_branch.size(), 0.0);
  d.dv = VectorXd::Zero(n);
  for (size_t v = 0; v < m.vars.size(); ++v) {
    const QVar& qv = m.vars[v];
    double x = s.x[static_cast<int>(v)];
    switch (qv.kind) {
      case QVar::Kind::QPlus: d.dq_plus_mvar[qv.owner] = x * base; break;
      case QVar::Kind::QMinus: d.dq_minus_mvar[qv.owner] = x * base; break;
      case QVar::Kind::TapUp: d.dt_plus[qv.owner] = x; break;
      case QVar::Kind::TapDown: d.dt_minus[qv.owner] = x; break;
      case QVar::Kind::DeltaV: d.dv[qv.owner] = x; break;
    }
  }
  d.q_price = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    if (m.bus_row[i] >= 0) d.q_price[i] = s.y_eq[m.bus_row[i]] / base;
  d.total_cost = s.obj;
  return d;
}

}  // namespace rbm
