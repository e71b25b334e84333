#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "rbm/interior_point.hpp"
#include "rbm/pdispatch.hpp"
#include "rbm/simplex.hpp"

using namespace rbm;

namespace {

struct Fixture {
  NetworkCase nc;
  MarketData md;
  Fixture()
      : nc(load_case(read_text_file(std::string(RBM_DATA_DIR) +
                                    "/case30.json"))),
        md(load_market(read_text_file(std::string(RBM_DATA_DIR) +
                                      "/market_table1.json"),
                       nc)) {}
  Scenario scenario(const std::string& name) const {
    return load_scenario(read_text_file(std::string(RBM_DATA_DIR) +
                                        "/scenarios/" + name + ".json"),
                         nc, md);
  }
  PowerFlowSolution stressed(const Scenario& sc) const {
    Injections inj = schedule_injections(nc, md);
    apply_load_change(inj, load_shares(nc, sc), sc.delta_p_sys);
    PowerFlowSolution pf = solve_power_flow(nc, inj);
    REQUIRE(pf.converged);
    return pf;
  }
};

int count_kind(const PModel& m, PVar::Kind k) {
  int c = 0;
  for (const auto& v : m.vars) c += v.kind == k;
  return c;
}

int var_index(const PModel& m, const std::string& name) {
  for (int j = 0; j < m.lp.n_vars(); ++j)
    if (m.lp.names[j] == name) return j;
  return -1;
}

double balance_residual_mw(const Fixture& fx, const PModel& m,
                           const PDispatch& d) {
  double sum_u = d.control_inj_mw.sum();
  return sum_u - d.total_loss_mw - m.delta_p_sys;
}

}  // namespace

TEST_CASE("normal-mode variable inventory matches the offered bids") {
  Fixture fx;
  Scenario sc = fx.scenario("normal100");
  PowerFlowSolution pf = fx.stressed(sc);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);
  PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);

  CHECK(count_kind(m, PVar::Kind::Inc) == 6);
  CHECK(count_kind(m, PVar::Kind::Dec) == 7);
  CHECK(count_kind(m, PVar::Kind::Res) == 1);
  CHECK(count_kind(m, PVar::Kind::Rep) == 6);
  CHECK(count_kind(m, PVar::Kind::Curtail) == 0);
  CHECK(count_kind(m, PVar::Kind::Angle) == 29);

  int res = var_index(m, "G-8.res");
  REQUIRE(res >= 0);
  CHECK(m.lp.lo[res] == 0.0);
  CHECK(m.lp.hi[res] == Catch::Approx(0.30));
  int c24 = var_index(m, "C-24.dec0");
  REQUIRE(c24 >= 0);
  CHECK(m.lp.hi[c24] == Catch::Approx(0.057));
  int g5 = var_index(m, "G-5.inc0");
  REQUIRE(g5 >= 0);
  CHECK(m.lp.hi[g5] == Catch::Approx(0.7544));
  int g8rep = var_index(m, "G-8.rep");
  REQUIRE(g8rep >= 0);
  CHECK(m.lp.hi[g8rep] == 0.0);  // headroom fully committed to reserve
  CHECK(m.lp.n_eq() == fx.nc.n_buses() + 1);
}

TEST_CASE("congestion mode with curtailment adds the contract variable") {
  Fixture fx;
  Scenario sc = fx.scenario("line18");
  PowerFlowSolution pf = fx.stressed(sc);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);
  PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);
  REQUIRE(count_kind(m, PVar::Kind::Curtail) == 1);
  int b1 = var_index(m, "B1.curt");
  REQUIRE(b1 >= 0);
  CHECK(m.lp.lo[b1] == 0.0);
  CHECK(m.lp.hi[b1] == Catch::Approx(0.106));
  CHECK(m.vars[b1].price == 50.0);
  CHECK(m.vars[b1].stamps.size() == 2);

  Scenario sc36 = fx.scenario("line36");
  PModel m36 = build_p_subproblem(fx.nc, pf, fx.md, sc36, sens);
  CHECK(count_kind(m36, PVar::Kind::Curtail) == 0);
  REQUIRE(m36.branch_row[fx.nc.branch_index(36)] >= 0);
}

TEST_CASE("copper-plate variant clears in ascending bid-price order") {
  Fixture fx;
  Scenario sc = fx.scenario("normal100_a0");
  PowerFlowSolution pf = fx.stressed(sc);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);
  sens.loss_sens.setZero();
  sens.flow_sens.setZero();
  PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);
  LPSolution s = solve_interior_point(m.lp);
  REQUIRE(s.status == LpStatus::Optimal);
  PDispatch d = extract_p_dispatch(m, s);

  // supply stack oracle: every accepted energy block implies all cheaper
  // blocks are full
  std::map<double, std::pair<double, double>> level;  // price -> (cap, used)
  for (size_t v = 0; v < m.vars.size(); ++v) {
    const PVar& pv = m.vars[v];
    bool supplies = pv.kind == PVar::Kind::Res ||
                    (pv.kind == PVar::Kind::Inc &&
                     fx.md.participants[pv.owner].side == Side::Generator) ||
                    (pv.kind == PVar::Kind::Dec &&
                     fx.md.participants[pv.owner].side == Side::Consumer);
    if (!supplies) continue;
    level[pv.price].first += m.lp.hi[static_cast<int>(v)];
    level[pv.price].second += s.x[static_cast<int>(v)];
  }
  double need = sc.delta_p_sys / fx.nc.base_mva;
  double expected_cost = 0.0;
  for (const auto& [price, cu] : level) {
    double take = std::min(need, cu.first);
    expected_cost += take * price * fx.nc.base_mva;
    need -= take;
    if (need > 1e-9) {
      CHECK(cu.second == Catch::Approx(cu.first).margin(1e-7));
    }
  }
  CHECK(need < 1e-9);
  CHECK(d.total_cost == Catch::Approx(expected_cost).margin(1e-4));
  CHECK(balance_residual_mw(fx, m, d) == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("stressed normal dispatch balances energy, losses and duals") {
  Fixture fx;
  Scenario sc = fx.scenario("normal100");
  PowerFlowSolution pf = fx.stressed(sc);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);
  PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);

  LPSolution si = solve_simplex(m.lp);
  LPSolution ip = solve_interior_point(m.lp);
  REQUIRE(si.status == LpStatus::Optimal);
  REQUIRE(ip.status == LpStatus::Optimal);
  CHECK(std::abs(si.obj - ip.obj) <= 1e-6 * (1.0 + std::abs(si.obj)));
  CHECK(kkt_residuals(m.lp, si).worst() < 1e-8);
  CHECK(kkt_residuals(m.lp, ip).worst() < 1e-8);

  PDispatch d = extract_p_dispatch(m, si);
  CHECK(balance_residual_mw(fx, m, d) == Catch::Approx(0.0).margin(1e-6));

  // replacement coupling
  double res = 0.0, rep = 0.0;
  for (const auto& pd : d.by_participant) {
    res += pd.dp_res;
    rep += pd.dp_rep;
    CHECK(pd.dp_plus >= -1e-9);
    CHECK(pd.dp_minus >= -1e-9);
    CHECK(!(pd.dp_plus > 1e-9 && pd.dp_minus > 1e-9));
  }
  CHECK(rep == Catch::Approx(sc.alpha * res).margin(1e-6));

  // every balance-row dual collapses to the same system price
  double lo = kInf, hi = -kInf;
  for (int i = 0; i < fx.nc.n_buses(); ++i) {
    double y = d.raw.y_eq[m.bus_row[i]] / fx.nc.base_mva;
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  CHECK(hi - lo < 1e-6 * (1.0 + std::abs(d.lambda)));
  CHECK(d.lambda > 0.0);

  // per-participant caps hold in megawatt terms
  for (size_t p = 0; p < fx.md.participants.size(); ++p) {
    const Participant& pa = fx.md.participants[p];
    const ParticipantDispatch& pd = d.by_participant[p];
    CHECK(pd.dp_plus + pd.dp_rep <=
          std::max(0.0, pa.p_max - pa.p0 - pa.reserve_mw) + 1e-6);
    CHECK(pd.dp_res <= pa.reserve_mw + 1e-6);
  }
  CHECK(d.cp1 + d.cp2 + d.cp3 + d.cp4 ==
        Catch::Approx(d.total_cost).margin(1e-9));
  CHECK(d.total_cost == Catch::Approx(si.obj).margin(1e-6));
  CHECK(d.cp3 == 0.0);
}

TEST_CASE("alpha sweep: objective is non-decreasing, zero alpha kills "
          "replacement") {
  Fixture fx;
  double prev = -kInf;
  for (const char* name : {"normal100_a0", "normal100_a05", "normal100"}) {
    Scenario sc = fx.scenario(name);
    PowerFlowSolution pf = fx.stressed(sc);
    SensitivityBundle sens = build_sensitivities(fx.nc, pf);
    PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);
    LPSolution s = solve_simplex(m.lp);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK(s.obj >= prev - 1e-7);
    prev = s.obj;
    PDispatch d = extract_p_dispatch(m, s);
    double rep = 0.0, res = 0.0;
    for (const auto& pd : d.by_participant) {
      rep += pd.dp_rep;
      res += pd.dp_res;
    }
    if (sc.alpha == 0.0) CHECK(rep == Catch::Approx(0.0).margin(1e-9));
    CHECK(rep == Catch::Approx(sc.alpha * res).margin(1e-6));
  }
}

TEST_CASE("monitored branch override is honored at the optimum") {
  Fixture fx;
  Scenario sc = fx.scenario("line36");
  PowerFlowSolution pf = fx.stressed(sc);
  int l36 = fx.nc.branch_index(36);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);
  PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);
  LPSolution s = solve_simplex(m.lp);
  REQUIRE(s.status == LpStatus::Optimal);
  PDispatch d = extract_p_dispatch(m, s);
  double post = pf.flow_p_from_mw[l36] + d.branch_dp_mw[l36];
  CHECK(std::abs(post) <= 24.0 + 1e-2);
  CHECK((d.contract_curtail_mw.empty() ||
         d.contract_curtail_mw[0] == Catch::Approx(0.0).margin(1e-9)));

  Scenario nrm = fx.scenario("normal100");
  PModel mn = build_p_subproblem(fx.nc, pf, fx.md, nrm, sens);
  LPSolution sn = solve_simplex(mn.lp);
  REQUIRE(sn.status == LpStatus::Optimal);
  CHECK(s.obj > sn.obj - 1e-9);  // relief cannot be cheaper than unconstrained

  // a cap below the unconstrained optimum's flow must bind with a price
  Scenario tight = nrm;
  tight.mode = DispatchMode::Congestion;
  tight.branch_limits.push_back({36, 20.0});
  PModel mt = build_p_subproblem(fx.nc, pf, fx.md, tight, sens);
  LPSolution st = solve_simplex(mt.lp);
  REQUIRE(st.status == LpStatus::Optimal);
  PDispatch dt = extract_p_dispatch(mt, st);
  double post_t = pf.flow_p_from_mw[l36] + dt.branch_dp_mw[l36];
  CHECK(std::abs(post_t) <= 20.0 + 1e-6);
  CHECK(dt.mu_branch_max[l36] > 1e-6);
  CHECK(st.obj > sn.obj + 1e-6);
}

TEST_CASE("hard corridor cap triggers bilateral curtailment") {
  Fixture fx;
  Scenario sc = fx.scenario("line18");
  PowerFlowSolution pf = fx.stressed(sc);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);
  PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);
  LPSolution s = solve_simplex(m.lp);
  REQUIRE(s.status == LpStatus::Optimal);
  PDispatch d = extract_p_dispatch(m, s);
  int l18 = fx.nc.branch_index(18);
  CHECK(d.contract_curtail_mw[0] > 1e-6);
  double post = pf.flow_p_from_mw[l18] + d.branch_dp_mw[l18];
  CHECK(std::abs(post) <= 19.0 + 1e-2);

  // decrement caps: pool decrement alone must not eat the bilateral
  // obligation, and decrement plus curtailment respects the floor
  int p13 = -1;
  for (size_t p = 0; p < fx.md.participants.size(); ++p)
    if (fx.md.participants[p].name == "G-13") p13 = static_cast<int>(p);
  REQUIRE(p13 >= 0);
  const ParticipantDispatch& g13 = d.by_participant[p13];
  CHECK(g13.dp_minus <= 16.91 - 10.6 + 1e-6);
  CHECK(g13.dp_minus + d.contract_curtail_mw[0] <= 16.91 - 5.0 + 1e-6);
}

TEST_CASE("seller-only curtailment shifts the energy burden to the pool") {
  Fixture fx;
  Scenario both = fx.scenario("line18");
  Scenario so = fx.scenario("line18_seller_only");
  PowerFlowSolution pf = fx.stressed(both);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);

  PModel mb = build_p_subproblem(fx.nc, pf, fx.md, both, sens);
  PModel ms = build_p_subproblem(fx.nc, pf, fx.md, so, sens);
  int cb = var_index(mb, "B1.curt");
  int cs = var_index(ms, "B1.curt");
  REQUIRE(mb.vars[cb].stamps.size() == 2);
  REQUIRE(ms.vars[cs].stamps.size() == 1);
  CHECK(ms.vars[cs].stamps[0].first == fx.nc.bus_index(13));
  CHECK(ms.vars[cs].stamps[0].second == -1.0);

  LPSolution sb = solve_simplex(mb.lp);
  LPSolution ss = solve_simplex(ms.lp);
  REQUIRE(sb.status == LpStatus::Optimal);
  REQUIRE(ss.status == LpStatus::Optimal);
  PDispatch db = extract_p_dispatch(mb, sb);
  PDispatch ds = extract_p_dispatch(ms, ss);
  CHECK(ds.contract_curtail_mw[0] > 1e-6);

  // with the load kept whole, the pool and reserve side must inject more
  auto pool_mw = [](const PDispatch& d, const MarketData& md) {
    double t = 0.0;
    for (size_t p = 0; p < md.participants.size(); ++p) {
      double sgn = md.participants[p].side == Side::Generator ? 1.0 : -1.0;
      t += sgn * (d.by_participant[p].dp_plus - d.by_participant[p].dp_minus) +
           d.by_participant[p].dp_res;
    }
    return t;
  };
  double shift = pool_mw(ds, fx.md) - pool_mw(db, fx.md);
  CHECK(shift > 0.5 * ds.contract_curtail_mw[0]);
  CHECK(balance_residual_mw(fx, ms, ds) == Catch::Approx(0.0).margin(1e-6));
  CHECK(balance_residual_mw(fx, mb, db) == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("extractor rejects non-optimal solutions") {
  Fixture fx;
  Scenario sc = fx.scenario("normal100");
  PowerFlowSolution pf = fx.stressed(sc);
  SensitivityBundle sens = build_sensitivities(fx.nc, pf);
  PModel m = build_p_subproblem(fx.nc, pf, fx.md, sc, sens);
  LPSolution bad;
  bad.status = LpStatus::Infeasible;
  CHECK_THROWS_AS(extract_p_dispatch(m, bad), std::runtime_error);
}
