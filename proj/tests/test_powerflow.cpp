#include <catch2/catch_amalgamated.hpp>

#include "rbm/powerflow.hpp"

using namespace rbm;
using Catch::Matchers::WithinAbs;

static std::string data_path(const std::string& name) {
  return std::string(RBM_DATA_DIR) + "/" + name;
}

static NetworkCase bundled_case() {
  return load_case(read_text_file(data_path("case30.json")));
}

static MarketData bundled_market(const NetworkCase& nc) {
  return load_market(read_text_file(data_path("market_table1.json")), nc);
}

static NetworkCase two_bus(double r, double x) {
  json j;
  j["base_mva"] = 100.0;
  j["slack_bus"] = 1;
  j["buses"] = json::array(
      {{{"id", 1}, {"load_p_mw", 0.0}, {"load_q_mvar", 0.0}, {"v_min", 0.9},
        {"v_max", 1.1}, {"gen", {{"v_set", 1.0}}}},
       {{"id", 2}, {"load_p_mw", 50.0}, {"load_q_mvar", 0.0}, {"v_min", 0.9},
        {"v_max", 1.1}, {"gen", {{"v_set", 1.0}}}}});
  j["branches"] = json::array({{{"id", 1}, {"from", 1}, {"to", 2}, {"r_pu", r},
                                {"x_pu", x}, {"b_pu", 0.0}, {"limit_mw", 999.0}}});
  return load_case(j.dump());
}

TEST_CASE("two-bus lossless transfer has the analytic angle") {
  NetworkCase nc = two_bus(0.0, 0.1);
  Injections inj{{0.0, -50.0}, {0.0, 0.0}};  // 0.5 p.u. drawn at bus 2
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  REQUIRE(sol.converged);
  CHECK_THAT(sol.theta[1], WithinAbs(-std::asin(0.05), 1e-9));
  CHECK_THAT(sol.v[1], WithinAbs(1.0, 1e-12));
  CHECK_THAT(sol.flow_p_from_mw[0], WithinAbs(50.0, 1e-6));
  // Lossless: receiving end mirrors the sending end exactly.
  CHECK_THAT(sol.flow_p_from_mw[0] + sol.flow_p_to_mw[0], WithinAbs(0.0, 1e-9));
  CHECK_THAT(sol.total_loss_mw, WithinAbs(0.0, 1e-7));
}

TEST_CASE("zero injections give a flat profile") {
  NetworkCase nc = two_bus(0.02, 0.1);
  Injections inj{{0.0, 0.0}, {0.0, 0.0}};
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  REQUIRE(sol.converged);
  CHECK(sol.iterations == 0);  // flat start already satisfies the equations
  CHECK_THAT(sol.v[1], WithinAbs(1.0, 1e-12));
  CHECK_THAT(sol.theta[1], WithinAbs(0.0, 1e-12));
  CHECK_THAT(sol.flow_p_from_mw[0], WithinAbs(0.0, 1e-9));
  CHECK_THAT(sol.total_loss_mw, WithinAbs(0.0, 1e-9));
}

TEST_CASE("resistive branch loses power in the right direction") {
  NetworkCase nc = two_bus(0.05, 0.1);
  Injections inj{{0.0, -50.0}, {0.0, -10.0}};
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  REQUIRE(sol.converged);
  CHECK(sol.total_loss_mw > 0.0);
  CHECK_THAT(sol.flow_p_from_mw[0] + sol.flow_p_to_mw[0],
             WithinAbs(sol.total_loss_mw, 1e-7));
  // Realized slack injection covers load plus loss.
  CHECK_THAT(sol.p_inj_mw[0], WithinAbs(50.0 + sol.total_loss_mw, 1e-6));
}

TEST_CASE("30-bus base point converges and balances") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  Injections inj = schedule_injections(nc, md);
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  REQUIRE(sol.converged);
  CHECK(sol.iterations <= 10);

  CHECK_THAT(sol.p_inj_mw.sum(), WithinAbs(sol.total_loss_mw, 1e-8 * 100.0));
  CHECK(sol.total_loss_mw > 0.0);

  // Regulated buses hold their setpoints.
  for (int i = 0; i < nc.n_buses(); ++i)
    if (nc.buses[i].has_gen) CHECK(sol.v[i] == nc.buses[i].v_set);

  // Non-slack buses meet their scheduled injections.
  int slack = nc.slack_index();
  for (int i = 0; i < nc.n_buses(); ++i) {
    if (i == slack) continue;
    CHECK_THAT(sol.p_inj_mw[i], WithinAbs(inj.p_mw[i], 100.0 * 1e-6));
    if (!nc.buses[i].has_gen)
      CHECK_THAT(sol.q_inj_mvar[i], WithinAbs(inj.q_mvar[i], 100.0 * 1e-6));
  }

  // Branch flow bookkeeping: sending plus receiving equals the branch loss,
  // and the sum of branch losses is the system loss.
  double branch_loss = 0.0;
  for (int l = 0; l < nc.n_branches(); ++l) {
    double bl = sol.flow_p_from_mw[l] + sol.flow_p_to_mw[l];
    CHECK(bl > -1e-9);
    branch_loss += bl;
  }
  // Bus shunts are purely reactive, so real losses live on branches alone.
  CHECK_THAT(branch_loss, WithinAbs(sol.total_loss_mw, 1e-6));
}

TEST_CASE("warm start from a converged state returns immediately") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  Injections inj = schedule_injections(nc, md);
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  REQUIRE(sol.converged);

  PfOptions warm;
  warm.v0.assign(sol.v.data(), sol.v.data() + sol.v.size());
  warm.theta0.assign(sol.theta.data(), sol.theta.data() + sol.theta.size());
  PowerFlowSolution resolved = solve_power_flow(nc, inj, warm);
  REQUIRE(resolved.converged);
  CHECK(resolved.iterations <= 2);
}

TEST_CASE("mismatch shrinks monotonically near the solution") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  Injections inj = schedule_injections(nc, md);
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  REQUIRE(sol.converged);
  REQUIRE(sol.mismatch_history.size() >= 3);
  size_t k = sol.mismatch_history.size();
  CHECK(sol.mismatch_history[k - 1] < sol.mismatch_history[k - 2]);
  CHECK(sol.mismatch_history[k - 2] < sol.mismatch_history[k - 3]);
}

TEST_CASE("stressed radial feeder depresses voltage below its floor") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  Injections inj = schedule_injections(nc, md);
  inj.p_mw[nc.bus_index(26)] -= 30.0;  // 3.5 -> 33.5 MW drawn
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  REQUIRE(sol.converged);
  CHECK(sol.v[nc.bus_index(26)] <= 0.85);
  CHECK(sol.v[nc.bus_index(26)] > 0.6);
}

TEST_CASE("divergent case reports non-convergence instead of throwing") {
  NetworkCase nc = two_bus(0.0, 0.1);
  // Far beyond the ~10 p.u. static transfer limit of x = 0.1.
  Injections inj{{0.0, -5000.0}, {0.0, 0.0}};
  PowerFlowSolution sol = solve_power_flow(nc, inj);
  CHECK_FALSE(sol.converged);
}

TEST_CASE("tap override changes the transformer flow split") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  Injections inj = schedule_injections(nc, md);
  PowerFlowSolution base = solve_power_flow(nc, inj);
  REQUIRE(base.converged);

  PfOptions opt;
  opt.taps.resize(nc.n_branches());
  for (int l = 0; l < nc.n_branches(); ++l) opt.taps[l] = nc.branches[l].tap;
  opt.taps[nc.branch_index(11)] += 0.0125;  // two steps up on 6-9
  PowerFlowSolution bumped = solve_power_flow(nc, inj, opt);
  REQUIRE(bumped.converged);
  CHECK(std::abs(bumped.flow_p_from_mw[nc.branch_index(11)] -
                 base.flow_p_from_mw[nc.branch_index(11)]) > 1e-3);
}
