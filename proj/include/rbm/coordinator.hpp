#pragma once

// Outer dispatch loop: alternate AC power flows with the two correction LPs
// until the corrected operating point honors every monitored branch limit and
// voltage band. Each pass re-solves the full market problem against
// sensitivities taken at the latest corrected point, so the LP answer and the
// network agree at the fixed point.

#include <optional>

#include "rbm/interior_point.hpp"
#include "rbm/pricing.hpp"
#include "rbm/simplex.hpp"

namespace rbm {

enum class RunStatus { Converged, MaxIterations, Infeasible };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::MaxIterations: return "max-iterations";
    case RunStatus::Infeasible: return "infeasible";
  }
  return "?";
}

struct RunOptions {
  int max_outer = 10;
  double flow_tol_pu = kFlowSlackPu;  // monitored branch slack at convergence
  double v_tol = kVSlackPu;           // voltage band slack at convergence
  std::optional<double> alpha;
  bool use_interior_point = false;
  bool capture_lp_text = false;
};

struct AuditEntry {
  int iteration = 0;
  bool curtailment_active = false;
  std::string p_status, q_status;
  double branch_violation_mw = 0.0;  // worst monitored overload after apply
  double voltage_violation = 0.0;    // worst band exit (p.u.) after apply
  double damping = 1.0;
  std::string note;
};

struct DispatchResult {
  std::string scenario;
  RunStatus status = RunStatus::Infeasible;
  int outer_iterations = 0;
  PDispatch p;
  std::optional<QDispatch> q;
  PriceReport prices;
  PowerFlowSolution final_pf;
  NetworkCase corrected_case;  // taps and set-points as finally applied
  VectorXd applied_inj_mw;     // net active correction in force per bus
  std::vector<AuditEntry> audit;
  std::string lp_text_p, lp_text_q;  // first-iteration programs, on request
  bool converged() const { return status == RunStatus::Converged; }
};

namespace detail {

struct Violation {
  double branch_mw = 0.0;
  double voltage = 0.0;
  std::string worst;
  double scalar() const { return branch_mw + 100.0 * voltage; }
};

inline Violation check_point(const NetworkCase& nc, const Scenario& sc,
                             const PowerFlowSolution& pf) {
  Violation v;
  for (const auto& [id, _] : sc.branch_limits) {
    int l = nc.branch_index(id);
    double lim = effective_limit(nc, sc, l);
    double over = std::abs(pf.flow_p_from_mw[l]) - lim;
    if (over > v.branch_mw) {
      v.branch_mw = over;
      v.worst = "branch " + std::to_string(id) + " over by " + fmt6(over) +
                " MW";
    }
  }
  for (int i = 0; i < nc.n_buses(); ++i) {
    double out = std::max(nc.buses[i].v_min - pf.v[i],
                          pf.v[i] - nc.buses[i].v_max);
    if (out > v.voltage) {
      v.voltage = out;
      v.worst = "bus " + std::to_string(nc.buses[i].id) + " voltage off by " +
                fmt6(out);
    }
  }
  return v;
}

}  // namespace detail

inline DispatchResult run_dispatch(const NetworkCase& nc,
                                   const MarketData& md, const Scenario& sc_in,
                                   const RunOptions& opt = {}) {
  Scenario sc = sc_in;
  if (opt.alpha) sc.alpha = *opt.alpha;
  auto solve = [&](const LinearProgram& lp) {
    return opt.use_interior_point ? solve_interior_point(lp)
                                  : solve_simplex(lp);
  };

  DispatchResult res;
  res.scenario = sc.name;
  NetworkCase work = nc;  // carries applied tap and set-point corrections
  int n = nc.n_buses();
  VectorXd applied_inj = VectorXd::Zero(n);  // MW, P corrections in force
  std::vector<double> accum_dq(md.participants.size(), 0.0);
  QDispatch q_total;
  q_total.dq_plus_mvar.assign(md.participants.size(), 0.0);
  q_total.dq_minus_mvar.assign(md.participants.size(), 0.0);
  q_total.dt_plus.assign(md.tap_bids.size(), 0.0);
  q_total.dt_minus.assign(md.tap_bids.size(), 0.0);
  q_total.dv = VectorXd::Zero(n);
  q_total.q_price = VectorXd::Zero(n);
  bool q_ran = false;

  Injections stressed = schedule_injections(nc, md);
  apply_load_change(stressed, load_shares(nc, sc), sc.delta_p_sys);

  auto done = [&](RunStatus s) -> DispatchResult& {
    res.status = s;
    res.corrected_case = work;
    res.applied_inj_mw = applied_inj;
    return res;
  };

  bool curtail_on = false;
  double damp = 1.0;
  double prev_scalar = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= opt.max_outer; ++it) {
    AuditEntry log;
    log.iteration = it;
    res.outer_iterations = it;

    Injections inj = stressed;
    for (int i = 0; i < n; ++i) inj.p_mw[i] += applied_inj[i];
    PowerFlowSolution pf = solve_power_flow(work, inj);
    if (!pf.converged) {
      log.note = "power flow diverged at the corrected point";
      res.audit.push_back(log);
      res.final_pf = pf;
      return done(RunStatus::Infeasible);
    }
    SensitivityBundle sens = build_sensitivities(work, pf);

    Scenario sc_pass = sc;
    sc_pass.curtailment_enabled = curtail_on;
    PModel pm = build_p_subproblem(work, pf, md, sc_pass, sens, &applied_inj);
    LPSolution ps = solve(pm.lp);
    if (ps.status != LpStatus::Optimal && sc.curtailment_enabled &&
        sc.mode == DispatchMode::Congestion && !curtail_on) {
      curtail_on = true;
      log.note = "relief without contract curtailment is " +
                 std::string(to_string(ps.status)) + "; curtailment enabled";
      sc_pass.curtailment_enabled = true;
      pm = build_p_subproblem(work, pf, md, sc_pass, sens, &applied_inj);
      ps = solve(pm.lp);
    }
    log.curtailment_active = curtail_on;
    log.p_status = to_string(ps.status);
    if (ps.status != LpStatus::Optimal) {
      detail::Violation v = detail::check_point(work, sc, pf);
      log.branch_violation_mw = v.branch_mw;
      log.voltage_violation = v.voltage;
      std::string cert = "balancing program is " +
                         std::string(to_string(ps.status)) +
                         (v.worst.empty() ? "" : "; unresolved: " + v.worst);
      log.note = log.note.empty() ? cert : log.note + "; " + cert;
      res.audit.push_back(log);
      res.final_pf = pf;
      return done(RunStatus::Infeasible);
    }
    PDispatch pd = extract_p_dispatch(pm, ps);
    if (opt.capture_lp_text && res.lp_text_p.empty())
      res.lp_text_p = dump_lp(pm.lp);

    MarketData md_q = md;  // reactive headroom net of earlier awards
    for (size_t p = 0; p < md_q.participants.size(); ++p)
      md_q.participants[p].q0 += accum_dq[p];
    QModel qm;
    LPSolution qs;
    try {
      qm = build_q_subproblem(work, pf, md_q, sens);
      qs = solve(qm.lp);
    } catch (const std::exception& e) {
      log.q_status = "rejected";
      log.note = e.what();
      res.audit.push_back(log);
      res.final_pf = pf;
      res.p = pd;
      return done(RunStatus::Infeasible);
    }
    log.q_status = to_string(qs.status);
    if (qs.status != LpStatus::Optimal) {
      log.note = "reactive program is " + std::string(to_string(qs.status));
      res.audit.push_back(log);
      res.final_pf = pf;
      res.p = pd;
      return done(RunStatus::Infeasible);
    }
    QDispatch qd = extract_q_dispatch(qm, qs);
    if (opt.capture_lp_text && res.lp_text_q.empty())
      res.lp_text_q = dump_lp(qm.lp);

    // apply corrections, damped only after an oscillation was seen
    applied_inj = damp * pd.control_inj_mw + (1.0 - damp) * applied_inj;
    for (size_t k = 0; k < md.tap_bids.size(); ++k) {
      int l = qm.tap_branch[k];
      double move = damp * (qd.dt_plus[k] - qd.dt_minus[k]);
      move = std::round(move / kTapStep) * kTapStep;
      move = std::clamp(move, work.branches[l].tap_min - work.branches[l].tap,
                        work.branches[l].tap_max - work.branches[l].tap);
      work.branches[l].tap += move;
      if (move >= 0.0)
        q_total.dt_plus[k] += move;
      else
        q_total.dt_minus[k] -= move;
    }
    for (int i = 0; i < n; ++i) {
      if (!work.buses[i].has_gen) continue;
      double dv = damp * qd.dv[i];
      work.buses[i].v_set = std::clamp(work.buses[i].v_set + dv,
                                       work.buses[i].v_min,
                                       work.buses[i].v_max);
    }
    for (size_t p = 0; p < md.participants.size(); ++p) {
      double dq = damp * (qd.dq_plus_mvar[p] - qd.dq_minus_mvar[p]);
      accum_dq[p] += dq;
      if (dq >= 0.0)
        q_total.dq_plus_mvar[p] += dq;
      else
        q_total.dq_minus_mvar[p] -= dq;
    }
    q_total.dv += damp * qd.dv;
    q_total.total_cost += qd.total_cost;
    bool q_active = qd.q_price.cwiseAbs().maxCoeff() > 0.0 ||
                    qd.dv.cwiseAbs().maxCoeff() > 1e-9;
    if (q_active || !q_ran) {
      q_total.q_price = qd.q_price;
      q_total.raw = qd.raw;
    }
    q_ran = true;

    Injections inj_post = stressed;
    for (int i = 0; i < n; ++i) inj_post.p_mw[i] += applied_inj[i];
    PowerFlowSolution post = solve_power_flow(work, inj_post);
    if (!post.converged) {
      log.note = "power flow diverged after applying corrections";
      res.audit.push_back(log);
      res.final_pf = post;
      res.p = pd;
      return done(RunStatus::Infeasible);
    }

    detail::Violation v = detail::check_point(work, sc, post);
    log.branch_violation_mw = v.branch_mw;
    log.voltage_violation = v.voltage;
    log.damping = damp;
    res.audit.push_back(log);

    res.p = pd;
    res.q = q_total;
    res.final_pf = post;
    res.prices = compute_prices(pm, pd, md, sens, &q_total);

    if (v.branch_mw <= opt.flow_tol_pu * nc.base_mva &&
        v.voltage <= opt.v_tol)
      return done(RunStatus::Converged);
    if (v.scalar() > prev_scalar) damp *= 0.5;
    if (!curtail_on && sc.curtailment_enabled &&
        sc.mode == DispatchMode::Congestion && v.branch_mw > 0.0) {
      curtail_on = true;
      res.audit.back().note = "monitored overload persists; curtailment "
                              "enabled for the next pass";
    }
    prev_scalar = v.scalar();
  }
  return done(RunStatus::MaxIterations);
}

// Fold a finished dispatch back into its inputs: stressed loads, cleared
// energy awards and contract cuts become the base schedule, taps and voltage
// set-points stay as applied, and the scenario keeps only the monitoring
// duties. Re-running the dispatch on these inputs at a true fixed point
// re-dispatches nothing.
struct FixedPointInputs {
  NetworkCase nc;
  MarketData md;
  Scenario sc;
};

inline FixedPointInputs fixed_point_inputs(const NetworkCase& nc,
                                           const MarketData& md,
                                           const Scenario& sc,
                                           const DispatchResult& r) {
  FixedPointInputs f{r.corrected_case, md, sc};
  std::vector<double> shares = load_shares(nc, sc);
  for (int i = 0; i < nc.n_buses(); ++i)
    f.nc.buses[i].load_p += shares[i] * sc.delta_p_sys;
  f.sc.delta_p_sys = 0.0;
  for (size_t p = 0; p < md.participants.size(); ++p) {
    const ParticipantDispatch& d = r.p.by_participant[p];
    Participant& pa = f.md.participants[p];
    double dq =
        r.q ? r.q->dq_plus_mvar[p] - r.q->dq_minus_mvar[p] : 0.0;
    if (pa.side == Side::Generator) {
      pa.p0 += d.dp_plus - d.dp_minus + d.dp_res;
      pa.q0 += dq;
    } else {
      int b = nc.bus_index(pa.bus);
      f.nc.buses[b].load_p += d.dp_plus - d.dp_minus;
      f.nc.buses[b].load_q -= dq;
    }
  }
  for (size_t c = 0; c < md.contracts.size(); ++c) {
    double cut =
        c < r.p.contract_curtail_mw.size() ? r.p.contract_curtail_mw[c] : 0.0;
    if (cut <= 0.0) continue;
    const BilateralContract& ct = md.contracts[c];
    if (ct.mode != CurtailMode::BuyerOnly)
      f.nc.buses[nc.bus_index(ct.seller_bus)].load_p += cut;
    if (ct.mode != CurtailMode::SellerOnly)
      f.nc.buses[nc.bus_index(ct.buyer_bus)].load_p -= cut;
    f.md.contracts[c].amount_mw = std::max(0.0, ct.amount_mw - cut);
  }
  return f;
}

inline json render_result_json(const NetworkCase& nc, const MarketData& md,
                               const Scenario& sc, const DispatchResult& r) {
  json j;
  j["scenario"] = r.scenario;
  j["converged"] = r.converged();
  j["status"] = to_string(r.status);
  j["iterations"] = r.outer_iterations;

  json pd = json::object();
  json parts = json::array();
  for (size_t p = 0; p < md.participants.size(); ++p) {
    const ParticipantDispatch& d = r.p.by_participant.empty()
                                       ? ParticipantDispatch{}
                                       : r.p.by_participant[p];
    parts.push_back({{"name", md.participants[p].name},
                     {"dp_plus", round6(d.dp_plus)},
                     {"dp_minus", round6(d.dp_minus)},
                     {"dp_res", round6(d.dp_res)},
                     {"dp_rep", round6(d.dp_rep)}});
  }
  pd["participants"] = parts;
  json cuts = json::array();
  for (size_t c = 0; c < md.contracts.size(); ++c)
    cuts.push_back({{"contract", md.contracts[c].id},
                    {"mw", round6(c < r.p.contract_curtail_mw.size()
                                      ? r.p.contract_curtail_mw[c]
                                      : 0.0)}});
  pd["curtailment"] = cuts;
  pd["lambda"] = round6(r.p.lambda);
  j["p_dispatch"] = pd;

  json qd = json::object();
  if (r.q) {
    json qparts = json::array();
    for (size_t p = 0; p < md.participants.size(); ++p)
      qparts.push_back({{"name", md.participants[p].name},
                        {"dq_plus", round6(r.q->dq_plus_mvar[p])},
                        {"dq_minus", round6(r.q->dq_minus_mvar[p])}});
    qd["participants"] = qparts;
    json taps = json::array();
    for (size_t k = 0; k < md.tap_bids.size(); ++k)
      taps.push_back({{"branch", md.tap_bids[k].branch},
                      {"dt_plus", round6(r.q->dt_plus[k])},
                      {"dt_minus", round6(r.q->dt_minus[k])}});
    qd["taps"] = taps;
    json qprices = json::array();
    for (int i = 0; i < nc.n_buses(); ++i)
      qprices.push_back(
          {{"bus", nc.buses[i].id}, {"rho_q", round6(r.q->q_price[i])}});
    qd["prices"] = qprices;
  }
  j["q_dispatch"] = qd;

  j["costs"] = {{"c_p1", round6(r.p.cp1)},
                {"c_p2", round6(r.p.cp2)},
                {"c_p3", round6(r.p.cp3)},
                {"c_p4", round6(r.p.cp4)},
                {"total", round6(r.p.total_cost)}};

  json prices = json::array();
  for (int i = 0; i < nc.n_buses(); ++i)
    prices.push_back({{"bus", nc.buses[i].id},
                      {"lambda", round6(r.prices.lambda)},
                      {"loss", round6(r.prices.loss_component.size()
                                          ? r.prices.loss_component[i]
                                          : 0.0)},
                      {"congestion", round6(r.prices.congestion_component.size()
                                                ? r.prices.congestion_component[i]
                                                : 0.0)},
                      {"rho", round6(r.prices.rho_p.size() ? r.prices.rho_p[i]
                                                           : 0.0)}});
  j["prices"] = prices;

  json flows = json::array();
  for (int l = 0; l < nc.n_branches(); ++l) {
    double dual = 0.0;
    if (r.p.mu_branch_max.size() == nc.n_branches())
      dual = r.p.mu_branch_max[l] - r.p.mu_branch_min[l];
    flows.push_back({{"branch", nc.branches[l].id},
                     {"mw", round6(r.final_pf.flow_p_from_mw.size()
                                       ? r.final_pf.flow_p_from_mw[l]
                                       : 0.0)},
                     {"limit", round6(effective_limit(nc, sc, l))},
                     {"dual", round6(dual)}});
  }
  j["flows"] = flows;
  return j;
}

struct SuiteEntry {
  std::string scenario;
  RunStatus status = RunStatus::Infeasible;
  double lambda = 0.0;
  double total_cost = 0.0;
  std::vector<std::string> mismatches;
  std::string error;
  json result;
  bool ok() const {
    return error.empty() && status == RunStatus::Converged &&
           mismatches.empty();
  }
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;
  bool all_ok() const {
    for (const auto& e : entries)
      if (!e.ok()) return false;
    return !entries.empty();
  }
};

// Expected-values file: {"<scenario>": {"lambda": .., "total_cost": ..,
// "participants": {"G-5": {"dp_plus": ..}, ...}}, "tolerances": {...}}
inline SuiteReport run_suite(const NetworkCase& nc, const MarketData& md,
                             const std::vector<Scenario>& scenarios,
                             const json& expected = json::object(),
                             const RunOptions& opt = {}) {
  double tol_price = 0.05, tol_mw = 0.5, tol_cost = 1.0;
  if (expected.contains("tolerances")) {
    const json& t = expected["tolerances"];
    tol_price = t.value("price", tol_price);
    tol_mw = t.value("mw", tol_mw);
    tol_cost = t.value("cost", tol_cost);
  }
  SuiteReport rep;
  for (const Scenario& sc : scenarios) {
    SuiteEntry e;
    e.scenario = sc.name;
    try {
      DispatchResult r = run_dispatch(nc, md, sc, opt);
      e.status = r.status;
      e.lambda = r.prices.lambda;
      e.total_cost = r.p.total_cost;
      e.result = render_result_json(nc, md, sc, r);
      if (expected.contains(sc.name)) {
        const json& x = expected[sc.name];
        auto miss = [&](const std::string& what, double got, double want,
                        double tol) {
          if (std::abs(got - want) > tol)
            e.mismatches.push_back(what + ": got " + fmt6(got) +
                                   ", expected " + fmt6(want) + " +/- " +
                                   fmt6(tol));
        };
        if (x.contains("lambda"))
          miss("lambda", e.lambda, x["lambda"].get<double>(), tol_price);
        if (x.contains("total_cost"))
          miss("total_cost", e.total_cost, x["total_cost"].get<double>(),
               tol_cost);
        if (x.contains("converged") &&
            x["converged"].get<bool>() != r.converged())
          e.mismatches.push_back("converged: got " +
                                 std::string(r.converged() ? "true" : "false"));
        if (x.contains("participants")) {
          for (auto it = x["participants"].begin();
               it != x["participants"].end(); ++it) {
            const Participant* pa = md.by_name(it.key());
            if (!pa) {
              e.mismatches.push_back("unknown participant " + it.key());
              continue;
            }
            size_t p = pa - md.participants.data();
            const ParticipantDispatch& d = r.p.by_participant[p];
            const json& want = it.value();
            if (want.contains("dp_plus"))
              miss(it.key() + ".dp_plus", d.dp_plus,
                   want["dp_plus"].get<double>(), tol_mw);
            if (want.contains("dp_minus"))
              miss(it.key() + ".dp_minus", d.dp_minus,
                   want["dp_minus"].get<double>(), tol_mw);
            if (want.contains("dp_res"))
              miss(it.key() + ".dp_res", d.dp_res,
                   want["dp_res"].get<double>(), tol_mw);
            if (want.contains("dp_rep"))
              miss(it.key() + ".dp_rep", d.dp_rep,
                   want["dp_rep"].get<double>(), tol_mw);
          }
        }
      }
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

}  // namespace rbm
