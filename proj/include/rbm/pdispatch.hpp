#pragma once

// Active-power sub-problem: clears incremental/decremental pool bids, reserve
// energy, bilateral curtailments and replacement reserve against the nodal
// balance, loss allocation, the replacement coupling row, and monitored
// branch limits. Built in per-unit at a given stressed operating point.

#include "rbm/lp.hpp"
#include "rbm/netmodel.hpp"
#include "rbm/powerflow.hpp"
#include "rbm/sensitivity.hpp"

namespace rbm {

inline constexpr double kFlowSlackPu = 1e-4;  // monitored-flow tolerance, p.u.

struct PVar {
  enum class Kind { Inc, Dec, Res, Rep, Curtail, Angle };
  Kind kind;
  int owner = -1;  // participant index, contract index, or bus position
  int step = 0;
  double price = 0.0;                          // $/MWh ($/MW for Rep)
  std::vector<std::pair<int, double>> stamps;  // (bus pos, injection sign)
};

struct PModel {
  LinearProgram lp;
  std::vector<PVar> vars;
  std::vector<int> bus_row;       // bus pos -> balance row
  int rep_row = -1;               // replacement coupling row, in a_eq
  std::vector<int> branch_row;    // branch pos -> monitored flow row or -1
  std::vector<int> headroom_row;  // participant -> inc+rep headroom row or -1
  std::vector<int> dec_row;       // participant -> decrement cap row or -1
  std::vector<int> joint_row;     // participant -> dec+curtail floor row or -1

  double base_mva = 100.0;
  double delta_p_sys = 0.0;  // MW
  double alpha = 1.0;
  std::vector<double> eta;  // per bus
  VectorXd loss_sens;       // per bus
  MatrixXd flow_sens;       // per branch x bus
  VectorXd flow0;           // pre-dispatch sending-end flow, p.u.
  int n_participants = 0, n_contracts = 0;
};

struct ParticipantDispatch {
  double dp_plus = 0.0, dp_minus = 0.0, dp_res = 0.0, dp_rep = 0.0;  // MW
};

struct PDispatch {
  std::vector<ParticipantDispatch> by_participant;
  std::vector<double> contract_curtail_mw;
  VectorXd dtheta;            // rad, per bus (slack 0)
  VectorXd control_inj_mw;    // net control injection change per bus
  VectorXd dp_loss_mw;        // allocated loss change per bus
  double total_loss_mw = 0.0;
  VectorXd branch_dp_mw;      // first-order flow change per branch
  double cp1 = 0.0, cp2 = 0.0, cp3 = 0.0, cp4 = 0.0;
  double total_cost = 0.0;
  double lambda = 0.0;                  // $/MWh system balance dual
  VectorXd mu_branch_max, mu_branch_min;  // $/MWh per branch (0 off-monitor)
  std::vector<double> mu_plus, mu_minus, mu_res;  // per participant
  std::vector<double> mu_curtail;                 // per contract
  double mu_rep = 0.0;
  LPSolution raw;
};

namespace detail {

inline double inc_headroom_mw(const Participant& p) {
  return std::max(0.0, p.p_max - p.p0 - p.reserve_mw);
}

inline double contracted_mw(const MarketData& md, const Participant& p) {
  double s = 0.0;
  for (const auto& c : md.contracts) {
    if (p.side == Side::Generator && c.seller_bus == p.bus) s += c.amount_mw;
    if (p.side == Side::Consumer && c.buyer_bus == p.bus) s += c.amount_mw;
  }
  return s;
}

inline double dec_cap_mw(const MarketData& md, const Participant& p) {
  return std::max(0.0, p.p0 - std::max(p.p_min, contracted_mw(md, p)));
}

// Nodal stamps of one curtailment variable: the seller's injection drops and
// the buyer's load is relieved. Single-sided curtailment keeps only the
// chosen side so the energy imbalance lands on the other controls.
inline std::vector<std::pair<int, double>> curtailment_stamps(
    const NetworkCase& nc, const BilateralContract& c, CurtailMode mode) {
  std::vector<std::pair<int, double>> st;
  if (mode != CurtailMode::BuyerOnly)
    st.push_back({nc.bus_index(c.seller_bus), -1.0});
  if (mode != CurtailMode::SellerOnly)
    st.push_back({nc.bus_index(c.buyer_bus), +1.0});
  return st;
}

}  // namespace detail

// `prior_inj_mw` holds control injections already applied to the operating
// point behind `pf`; branch references are rebased so the program re-decides
// the full dispatch without double-counting what is in force.
inline PModel build_p_subproblem(const NetworkCase& nc,
                                 const PowerFlowSolution& pf,
                                 const MarketData& md, const Scenario& sc,
                                 const SensitivityBundle& sens,
                                 const VectorXd* prior_inj_mw = nullptr) {
  int n = nc.n_buses();
  int np = static_cast<int>(md.participants.size());
  PModel m;
  m.base_mva = nc.base_mva;
  m.delta_p_sys = sc.delta_p_sys;
  m.alpha = sc.alpha;
  m.eta = load_shares(nc, sc);
  m.loss_sens = sens.loss_sens;
  m.flow_sens = sens.flow_sens;
  m.flow0 = pf.flow_p_from_mw / nc.base_mva;
  if (prior_inj_mw) m.flow0 -= sens.flow_sens * (*prior_inj_mw / nc.base_mva);
  m.n_participants = np;
  m.n_contracts = static_cast<int>(md.contracts.size());

  bool curtail = sc.mode == DispatchMode::Congestion && sc.curtailment_enabled;
  double base = nc.base_mva;

  std::vector<std::string> names;
  auto add_var = [&](PVar::Kind k, int owner, int step, double price,
                     std::vector<std::pair<int, double>> stamps,
                     double lo, double hi, const std::string& name) {
    m.vars.push_back({k, owner, step, price, std::move(stamps)});
    names.push_back(name);
    int j = static_cast<int>(names.size());
    m.lp.lo.conservativeResize(j);
    m.lp.hi.conservativeResize(j);
    m.lp.c.conservativeResize(j);
    m.lp.lo[j - 1] = lo;
    m.lp.hi[j - 1] = hi;
    m.lp.c[j - 1] = price * base;
    return j - 1;
  };

  std::vector<std::vector<int>> inc_vars(np), dec_vars(np);
  std::vector<int> res_var(np, -1), rep_var(np, -1);
  for (int p = 0; p < np; ++p) {
    const Participant& pa = md.participants[p];
    double sgn = pa.side == Side::Generator ? 1.0 : -1.0;
    int bpos = nc.bus_index(pa.bus);
    for (size_t st = 0; st < pa.bids.incr.size(); ++st) {
      const BidStep& b = pa.bids.incr[st];
      double cap = b.mw > 0 ? b.mw : detail::inc_headroom_mw(pa);
      inc_vars[p].push_back(add_var(
          PVar::Kind::Inc, p, static_cast<int>(st), b.price, {{bpos, sgn}}, 0.0,
          cap / base, pa.name + ".inc" + std::to_string(st)));
    }
    for (size_t st = 0; st < pa.bids.decr.size(); ++st) {
      const BidStep& b = pa.bids.decr[st];
      double cap = b.mw > 0 ? b.mw : detail::dec_cap_mw(md, pa);
      dec_vars[p].push_back(add_var(
          PVar::Kind::Dec, p, static_cast<int>(st), b.price, {{bpos, -sgn}},
          0.0, cap / base, pa.name + ".dec" + std::to_string(st)));
    }
  }
  for (int p = 0; p < np; ++p) {
    const Participant& pa = md.participants[p];
    if (pa.reserve_mw > 0 && pa.bids.reserve_energy_price)
      res_var[p] = add_var(PVar::Kind::Res, p, 0, *pa.bids.reserve_energy_price,
                           {{nc.bus_index(pa.bus), 1.0}}, 0.0,
                           pa.reserve_mw / base, pa.name + ".res");
  }
  for (int p = 0; p < np; ++p) {
    const Participant& pa = md.participants[p];
    if (pa.bids.reserve_capacity_price)
      rep_var[p] =
          add_var(PVar::Kind::Rep, p, 0, *pa.bids.reserve_capacity_price, {},
                  0.0, detail::inc_headroom_mw(pa) / base, pa.name + ".rep");
  }
  std::vector<int> curt_var(md.contracts.size(), -1);
  if (curtail) {
    for (size_t c = 0; c < md.contracts.size(); ++c) {
      const BilateralContract& ct = md.contracts[c];
      curt_var[c] = add_var(
          PVar::Kind::Curtail, static_cast<int>(c), 0, ct.curtail_price,
          detail::curtailment_stamps(nc, ct, effective_mode(ct, sc)), 0.0,
          ct.amount_mw / base, ct.id + ".curt");
    }
  }
  int slack = nc.slack_index();
  std::vector<int> theta_var(n, -1);
  for (int i = 0; i < n; ++i) {
    if (i == slack) continue;
    theta_var[i] = add_var(PVar::Kind::Angle, i, 0, 0.0, {}, -kInf, kInf,
                           "th." + std::to_string(nc.buses[i].id));
  }
  m.lp.names = std::move(names);
  int nv = m.lp.n_vars();

  // nodal balance rows: loss-weighted control injections against the network
  // angle response, load growth allocated on the right-hand side
  bool any_rep = false;
  for (int p = 0; p < np; ++p) any_rep = any_rep || rep_var[p] >= 0;
  int ne = n + (any_rep ? 1 : 0);
  m.lp.a_eq = MatrixXd::Zero(ne, nv);
  m.lp.b_eq = VectorXd::Zero(ne);
  m.bus_row.assign(n, -1);
  double dps_pu = sc.delta_p_sys / base;
  for (int i = 0; i < n; ++i) {
    m.bus_row[i] = i;
    m.lp.b_eq[i] = (1.0 - sens.loss_sens[i]) * m.eta[i] * dps_pu;
    for (int j = 0; j < n; ++j)
      if (theta_var[j] >= 0 && sens.bprime_full(i, j) != 0.0)
        m.lp.a_eq(i, theta_var[j]) = -sens.bprime_full(i, j);
  }
  for (int v = 0; v < nv; ++v)
    for (const auto& [bpos, sgn] : m.vars[v].stamps)
      m.lp.a_eq(bpos, v) += (1.0 - sens.loss_sens[bpos]) * sgn;

  if (any_rep) {
    m.rep_row = n;
    for (int p = 0; p < np; ++p) {
      if (rep_var[p] >= 0) m.lp.a_eq(m.rep_row, rep_var[p]) = 1.0;
      if (res_var[p] >= 0) m.lp.a_eq(m.rep_row, res_var[p]) = -sc.alpha;
    }
  }

  // inequality rows: monitored branches, then the per-participant caps
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> row_lo, row_hi;
  m.branch_row.assign(nc.n_branches(), -1);
  for (const auto& [bid, lim_mw] : sc.branch_limits) {
    int l = nc.branch_index(bid);
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
    for (int v = 0; v < nv; ++v)
      for (const auto& [bpos, sgn] : m.vars[v].stamps)
        row[v] += sgn * sens.flow_sens(l, bpos);
    double lim = lim_mw / base;
    double hi = lim - m.flow0[l];
    double lo = -lim - m.flow0[l];
    // A residual overload inside the outer-loop flow tolerance is treated as
    // resolved; otherwise a schedule pinned at the limit would chatter.
    if (hi < 0.0 && hi >= -kFlowSlackPu) hi = 0.0;
    if (lo > 0.0 && lo <= kFlowSlackPu) lo = 0.0;
    m.branch_row[l] = static_cast<int>(rows.size());
    rows.push_back(row);
    row_lo.push_back(lo);
    row_hi.push_back(hi);
  }
  m.headroom_row.assign(np, -1);
  m.dec_row.assign(np, -1);
  m.joint_row.assign(np, -1);
  for (int p = 0; p < np; ++p) {
    const Participant& pa = md.participants[p];
    if (!inc_vars[p].empty() || rep_var[p] >= 0) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
      for (int v : inc_vars[p]) row[v] = 1.0;
      if (rep_var[p] >= 0) row[rep_var[p]] = 1.0;
      m.headroom_row[p] = static_cast<int>(rows.size());
      rows.push_back(row);
      row_lo.push_back(-kInf);
      row_hi.push_back(detail::inc_headroom_mw(pa) / base);
    }
    if (!dec_vars[p].empty()) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
      for (int v : dec_vars[p]) row[v] = 1.0;
      m.dec_row[p] = static_cast<int>(rows.size());
      rows.push_back(row);
      row_lo.push_back(-kInf);
      row_hi.push_back(detail::dec_cap_mw(md, pa) / base);
    }
    if (curtail) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
      for (int v : dec_vars[p]) row[v] = 1.0;
      bool owns = false;
      for (size_t c = 0; c < md.contracts.size(); ++c) {
        const BilateralContract& ct = md.contracts[c];
        bool mine = (pa.side == Side::Generator && ct.seller_bus == pa.bus) ||
                    (pa.side == Side::Consumer && ct.buyer_bus == pa.bus);
        if (mine && curt_var[c] >= 0) {
          row[curt_var[c]] = 1.0;
          owns = true;
        }
      }
      if (owns) {
        m.joint_row[p] = static_cast<int>(rows.size());
        rows.push_back(row);
        row_lo.push_back(-kInf);
        row_hi.push_back(std::max(0.0, pa.p0 - pa.p_min) / base);
      }
    }
  }
  int mi = static_cast<int>(rows.size());
  m.lp.a_ineq = MatrixXd::Zero(mi, nv);
  m.lp.lo_ineq = VectorXd::Zero(mi);
  m.lp.hi_ineq = VectorXd::Zero(mi);
  for (int r = 0; r < mi; ++r) {
    m.lp.a_ineq.row(r) = rows[r];
    m.lp.lo_ineq[r] = row_lo[r];
    m.lp.hi_ineq[r] = row_hi[r];
  }
  m.lp.validate();
  return m;
}

inline PDispatch extract_p_dispatch(const PModel& m, const LPSolution& s) {
  if (s.status != LpStatus::Optimal)
    throw std::runtime_error(std::string("dispatch sub-problem is ") +
                             to_string(s.status));
  int n = static_cast<int>(m.bus_row.size());
  double base = m.base_mva;
  PDispatch d;
  d.raw = s;
  d.by_participant.assign(m.n_participants, {});
  d.contract_curtail_mw.assign(m.n_contracts, 0.0);
  d.dtheta = VectorXd::Zero(n);
  d.control_inj_mw = VectorXd::Zero(n);
  d.mu_curtail.assign(m.n_contracts, 0.0);

  for (size_t v = 0; v < m.vars.size(); ++v) {
    const PVar& pv = m.vars[v];
    double mw = s.x[static_cast<int>(v)] * base;
    double cost = mw * pv.price;
    switch (pv.kind) {
      case PVar::Kind::Inc:
        d.by_participant[pv.owner].dp_plus += mw;
        d.cp1 += cost;
        break;
      case PVar::Kind::Dec:
        d.by_participant[pv.owner].dp_minus += mw;
        d.cp1 += cost;
        break;
      case PVar::Kind::Res:
        d.by_participant[pv.owner].dp_res += mw;
        d.cp2 += cost;
        break;
      case PVar::Kind::Rep:
        d.by_participant[pv.owner].dp_rep += mw;
        d.cp4 += cost;
        break;
      case PVar::Kind::Curtail:
        d.contract_curtail_mw[pv.owner] += mw;
        d.cp3 += cost;
        d.mu_curtail[pv.owner] = s.z_hi[static_cast<int>(v)] / base;
        break;
      case PVar::Kind::Angle:
        d.dtheta[pv.owner] = s.x[static_cast<int>(v)];
        break;
    }
    for (const auto& [bpos, sgn] : pv.stamps) d.control_inj_mw[bpos] += sgn * mw;
  }
  d.total_cost = d.cp1 + d.cp2 + d.cp3 + d.cp4;

  d.dp_loss_mw = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    d.dp_loss_mw[i] = m.loss_sens[i] *
                      (d.control_inj_mw[i] - m.eta[i] * m.delta_p_sys);
  d.total_loss_mw = d.dp_loss_mw.sum();

  int nl = static_cast<int>(m.branch_row.size());
  d.branch_dp_mw = VectorXd::Zero(nl);
  for (int l = 0; l < nl; ++l)
    for (int i = 0; i < n; ++i)
      d.branch_dp_mw[l] += m.flow_sens(l, i) * d.control_inj_mw[i];

  d.lambda = s.y_eq[m.bus_row[0]] / base;
  // angle stationarity forces every balance-row dual to the same value; take
  // the first row and let tests confirm the collapse
  d.mu_branch_max = VectorXd::Zero(nl);
  d.mu_branch_min = VectorXd::Zero(nl);
  for (int l = 0; l < nl; ++l) {
    if (m.branch_row[l] < 0) continue;
    d.mu_branch_max[l] = s.mu_max(m.branch_row[l]) / base;
    d.mu_branch_min[l] = s.mu_min(m.branch_row[l]) / base;
  }
  d.mu_plus.assign(m.n_participants, 0.0);
  d.mu_minus.assign(m.n_participants, 0.0);
  d.mu_res.assign(m.n_participants, 0.0);
  for (int p = 0; p < m.n_participants; ++p) {
    if (m.headroom_row[p] >= 0) d.mu_plus[p] = s.mu_max(m.headroom_row[p]) / base;
    if (m.dec_row[p] >= 0) d.mu_minus[p] = s.mu_max(m.dec_row[p]) / base;
  }
  for (size_t v = 0; v < m.vars.size(); ++v)
    if (m.vars[v].kind == PVar::Kind::Res)
      d.mu_res[m.vars[v].owner] = s.z_hi[static_cast<int>(v)] / base;
  if (m.rep_row >= 0) d.mu_rep = s.y_eq[m.rep_row] / base;
  return d;
}

}  // namespace rbm
