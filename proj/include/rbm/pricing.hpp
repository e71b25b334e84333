#pragma once

// Price construction from the active-power sub-problem duals. The nodal
// price decomposes into the system marginal price, a loss share and a
// congestion share; participants with cleared quantities additionally get a
// bid-plus-multiplier form, replacement capacity gets its own price channel,
// and a single-side curtailment leaves the stranded partner with a charge.

#include <optional>

#include "rbm/pdispatch.hpp"
#include "rbm/qdispatch.hpp"

namespace rbm {

struct PriceForm {
  enum class Kind { Incremental, Decremental, ReserveEnergy };
  Kind kind;
  double bid = 0.0;         // marginal cleared bid, $/MWh
  double multiplier = 0.0;  // binding-limit duals stacked on the bid
  double value = 0.0;       // signed nodal worth, $/MWh
};

inline const char* to_string(PriceForm::Kind k) {
  switch (k) {
    case PriceForm::Kind::Incremental: return "incremental";
    case PriceForm::Kind::Decremental: return "decremental";
    case PriceForm::Kind::ReserveEnergy: return "reserve-energy";
  }
  return "?";
}

// Charge facing the non-curtailed side of a one-sided contract cut: the pool
// covers the stranded half, and the partner pays for that service.
struct PartnerCharge {
  int contract = -1;
  int bus = -1;
  Side side = Side::Consumer;
  double value = 0.0;  // $/MWh, sign follows the side convention
  bool obligation = false;
};

struct PriceReport {
  double lambda = 0.0;
  VectorXd rho_p, loss_component, congestion_component;  // per bus, $/MWh
  VectorXd rho_q;  // per bus, $/MVArh, zero when no reactive leg ran
  bool has_reactive = false;
  std::optional<double> mu_rep;
  std::vector<std::optional<double>> rho_rep;   // per participant, $/MW
  std::vector<std::optional<PriceForm>> forms;  // per participant
  std::vector<PartnerCharge> partner_charges;
  double curtailment_cost = 0.0;  // allocated separately, never inside rho
};

inline PriceReport compute_prices(const PModel& m, const PDispatch& d,
                                  const MarketData& md,
                                  const SensitivityBundle& sens,
                                  const QDispatch* q = nullptr) {
  if (d.raw.status != LpStatus::Optimal)
    throw std::runtime_error("pricing requires an optimal dispatch");
  int n = static_cast<int>(sens.loss_sens.size());
  double base = m.base_mva;
  double tol = 1e-7;
  PriceReport r;
  r.lambda = d.lambda;
  r.loss_component = -d.lambda * sens.loss_sens;
  r.congestion_component = VectorXd::Zero(n);
  for (int l = 0; l < d.mu_branch_max.size(); ++l) {
    double mu = d.mu_branch_max[l] - d.mu_branch_min[l];
    if (mu == 0.0) continue;
    for (int i = 0; i < n; ++i)
      r.congestion_component[i] -= mu * sens.flow_sens(l, i);
  }
  r.rho_p = VectorXd::Constant(n, r.lambda) + r.loss_component +
            r.congestion_component;

  if (m.alpha > 0.0 && m.rep_row >= 0) r.mu_rep = d.mu_rep;

  // marginal cleared variable per participant, scanned in bid-step order
  int np = m.n_participants;
  std::vector<int> inc_var(np, -1), dec_var(np, -1), res_var(np, -1);
  std::vector<bool> offers_rep(np, false);
  for (size_t v = 0; v < m.vars.size(); ++v) {
    const PVar& pv = m.vars[v];
    bool active = d.raw.x[static_cast<int>(v)] > tol;
    switch (pv.kind) {
      case PVar::Kind::Inc:
        if (active) inc_var[pv.owner] = static_cast<int>(v);
        break;
      case PVar::Kind::Dec:
        if (active) dec_var[pv.owner] = static_cast<int>(v);
        break;
      case PVar::Kind::Res:
        if (active) res_var[pv.owner] = static_cast<int>(v);
        break;
      case PVar::Kind::Rep: offers_rep[pv.owner] = true; break;
      default: break;
    }
  }

  r.rho_rep.assign(np, std::nullopt);
  r.forms.assign(np, std::nullopt);
  for (int p = 0; p < np; ++p) {
    if (r.mu_rep && offers_rep[p]) r.rho_rep[p] = *r.mu_rep + d.mu_plus[p];
    const Participant& pa = md.participants[p];
    double side = pa.side == Side::Generator ? 1.0 : -1.0;
    PriceForm f;
    if (inc_var[p] >= 0) {
      f.kind = PriceForm::Kind::Incremental;
      f.bid = m.vars[inc_var[p]].price;
      f.multiplier = d.mu_plus[p] + d.raw.z_hi[inc_var[p]] / base;
      f.value = side * (f.bid + f.multiplier);
    } else if (res_var[p] >= 0) {
      f.kind = PriceForm::Kind::ReserveEnergy;
      f.bid = m.vars[res_var[p]].price;
      f.multiplier = m.alpha * d.mu_rep + d.mu_res[p];
      f.value = f.bid + f.multiplier;
    } else if (dec_var[p] >= 0) {
      f.kind = PriceForm::Kind::Decremental;
      f.bid = m.vars[dec_var[p]].price;
      f.multiplier = d.mu_minus[p] + d.raw.z_hi[dec_var[p]] / base;
      if (m.joint_row[p] >= 0)
        f.multiplier += d.raw.mu_max(m.joint_row[p]) / base;
      f.value = -side * (f.bid + f.multiplier);
    } else {
      continue;  // no cleared quantity, the nodal price applies as-is
    }
    r.forms[p] = f;
  }

  for (size_t v = 0; v < m.vars.size(); ++v) {
    const PVar& pv = m.vars[v];
    if (pv.kind != PVar::Kind::Curtail) continue;
    if (pv.stamps.size() != 1) continue;  // both sides cut, nobody stranded
    if (d.contract_curtail_mw[pv.owner] <= tol) continue;
    const BilateralContract& c = md.contracts[pv.owner];
    PartnerCharge pc;
    pc.contract = pv.owner;
    bool seller_cut = pv.stamps[0].second < 0.0;
    pc.bus = seller_cut ? c.buyer_bus : c.seller_bus;
    pc.side = seller_cut ? Side::Consumer : Side::Generator;
    double beta = pc.side == Side::Consumer ? 1.0 : 0.0;
    pc.value = std::pow(-1.0, beta + 1.0) *
               (c.curtail_price + d.mu_curtail[pv.owner]);
    pc.obligation = pc.side == Side::Consumer ? pc.value > 0.0
                                              : pc.value < 0.0;
    r.partner_charges.push_back(pc);
  }

  r.curtailment_cost = d.cp3;
  r.rho_q = VectorXd::Zero(n);
  if (q) {
    r.has_reactive = true;
    r.rho_q = q->q_price;
  }
  return r;
}

inline std::string price_table_csv(const NetworkCase& nc,
                                   const PriceReport& r) {
  std::string out = "bus, lambda, loss_component, congestion_component, "
                    "rho_p, rho_q\n";
  for (int i = 0; i < nc.n_buses(); ++i) {
    out += std::to_string(nc.buses[i].id) + ", " + fmt6(r.lambda) + ", " +
           fmt6(r.loss_component[i]) + ", " +
           fmt6(r.congestion_component[i]) + ", " + fmt6(r.rho_p[i]) + ", " +
           fmt6(r.rho_q.size() ? r.rho_q[i] : 0.0) + "\n";
  }
  return out;
}

}  // namespace rbm
