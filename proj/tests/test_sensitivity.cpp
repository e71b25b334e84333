#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "rbm/sensitivity.hpp"

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

static json bus_obj(int id, double load_p, bool gen) {
  json b = {{"id", id},      {"load_p_mw", load_p}, {"load_q_mvar", 0.0},
            {"v_min", 0.9},  {"v_max", 1.1}};
  if (gen) b["gen"] = {{"v_set", 1.0}};
  return b;
}

static json branch_obj(int id, int from, int to, double r, double x) {
  return {{"id", id},   {"from", from},  {"to", to},       {"r_pu", r},
          {"x_pu", x},  {"b_pu", 0.0},   {"limit_mw", 999.0}};
}

static NetworkCase two_bus(double r, double x, bool gen2 = false,
                           double load2 = 50.0) {
  json j;
  j["base_mva"] = 100.0;
  j["slack_bus"] = 1;
  j["buses"] = json::array({bus_obj(1, 0.0, true), bus_obj(2, load2, gen2)});
  j["branches"] = json::array({branch_obj(1, 1, 2, r, x)});
  return load_case(j.dump());
}

static PowerFlowSolution solve_warm(const NetworkCase& nc,
                                    const Injections& inj,
                                    const PowerFlowSolution& base) {
  PfOptions opt;
  opt.v0.assign(base.v.data(), base.v.data() + base.v.size());
  opt.theta0.assign(base.theta.data(), base.theta.data() + base.theta.size());
  return solve_power_flow(nc, inj, opt);
}

TEST_CASE("two-bus inverse-reactance assembly") {
  NetworkCase nc = two_bus(0.0, 0.1);
  MatrixXd b = build_bprime(nc);
  CHECK_THAT(b(0, 0), WithinAbs(10.0, 1e-12));
  CHECK_THAT(b(0, 1), WithinAbs(-10.0, 1e-12));
  CHECK_THAT(b(1, 0), WithinAbs(-10.0, 1e-12));
  CHECK_THAT(b(1, 1), WithinAbs(10.0, 1e-12));
  MatrixXd red = build_bprime_reduced(nc);
  REQUIRE(red.rows() == 1);
  CHECK_THAT(red(0, 0), WithinAbs(10.0, 1e-12));
}

TEST_CASE("triangle network assembly") {
  json j;
  j["base_mva"] = 100.0;
  j["slack_bus"] = 1;
  j["buses"] = json::array(
      {bus_obj(1, 0.0, true), bus_obj(2, 10.0, false), bus_obj(3, 10.0, false)});
  j["branches"] = json::array({branch_obj(1, 1, 2, 0.0, 0.2),
                               branch_obj(2, 2, 3, 0.0, 0.2),
                               branch_obj(3, 1, 3, 0.0, 0.2)});
  NetworkCase nc = load_case(j.dump());
  MatrixXd b = build_bprime(nc);
  for (int i = 0; i < 3; ++i) {
    CHECK_THAT(b(i, i), WithinAbs(10.0, 1e-12));
    for (int k = 0; k < 3; ++k)
      if (k != i) CHECK_THAT(b(i, k), WithinAbs(-5.0, 1e-12));
  }
}

TEST_CASE("bundled network reduced matrix is positive definite") {
  NetworkCase nc = bundled_case();
  MatrixXd full = build_bprime(nc);
  CHECK(full.rows() == 30);
  CHECK((full - full.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(full.rowwise().sum().cwiseAbs().maxCoeff() < 1e-9);

  MatrixXd red = build_bprime_reduced(nc);
  REQUIRE(red.rows() == 29);
  REQUIRE(red.cols() == 29);
  Eigen::LLT<MatrixXd> llt(red);
  CHECK(llt.info() == Eigen::Success);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(red);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("lossless network has zero loss sensitivities") {
  NetworkCase nc = bundled_case();
  for (auto& br : nc.branches) br.r = 0.0;
  MarketData md = bundled_market(nc);
  PowerFlowSolution pf = solve_power_flow(nc, schedule_injections(nc, md));
  REQUIRE(pf.converged);
  VectorXd s = loss_sensitivities(nc, pf);
  CHECK(s.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("loss sensitivity is negative at a resistive link's receiving bus") {
  NetworkCase nc = two_bus(0.05, 0.2);
  Injections inj{{0.0, -50.0}, {0.0, 0.0}};
  PowerFlowSolution pf = solve_power_flow(nc, inj);
  REQUIRE(pf.converged);
  VectorXd s = loss_sensitivities(nc, pf);
  CHECK_THAT(s[0], WithinAbs(0.0, 1e-15));
  CHECK(s[1] < 0.0);

  double h = 0.5;
  Injections up = inj, dn = inj;
  up.p_mw[1] += h;
  dn.p_mw[1] -= h;
  double fd = (solve_warm(nc, up, pf).total_loss_mw -
               solve_warm(nc, dn, pf).total_loss_mw) /
              (2.0 * h);
  CHECK_THAT(s[1], WithinAbs(fd, 5e-3));
}

TEST_CASE("loss sensitivities match central differences on the bundled case") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  Injections inj = schedule_injections(nc, md);
  PowerFlowSolution pf = solve_power_flow(nc, inj);
  REQUIRE(pf.converged);
  VectorXd s = loss_sensitivities(nc, pf);
  int slack = nc.slack_index();
  CHECK(s[slack] == 0.0);

  double h = 0.5;
  for (int i = 0; i < nc.n_buses(); ++i) {
    if (i == slack) continue;
    Injections up = inj, dn = inj;
    up.p_mw[i] += h;
    dn.p_mw[i] -= h;
    PowerFlowSolution a = solve_warm(nc, up, pf);
    PowerFlowSolution b = solve_warm(nc, dn, pf);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    double fd = (a.total_loss_mw - b.total_loss_mw) / (2.0 * h);
    INFO("bus " << nc.buses[i].id);
    CHECK_THAT(s[i], WithinAbs(fd, 5e-3));
  }
}

TEST_CASE("shift factors on radial networks have unit magnitude") {
  NetworkCase nc = two_bus(0.0, 0.1);
  Injections inj{{0.0, -50.0}, {0.0, 0.0}};
  PowerFlowSolution pf = solve_power_flow(nc, inj);
  REQUIRE(pf.converged);
  MatrixXd gsf = flow_sensitivities(nc, pf);
  CHECK_THAT(gsf(0, 1), WithinAbs(-1.0, 1e-9));
  CHECK_THAT(gsf(0, 0), WithinAbs(0.0, 1e-15));

  json j;
  j["base_mva"] = 100.0;
  j["slack_bus"] = 1;
  j["buses"] = json::array(
      {bus_obj(1, 0.0, true), bus_obj(2, 10.0, false), bus_obj(3, 10.0, false)});
  j["branches"] = json::array(
      {branch_obj(1, 1, 2, 0.0, 0.1), branch_obj(2, 2, 3, 0.0, 0.25)});
  NetworkCase chain = load_case(j.dump());
  Injections cinj{{0.0, -10.0, -10.0}, {0.0, 0.0, 0.0}};
  PowerFlowSolution cpf = solve_power_flow(chain, cinj);
  REQUIRE(cpf.converged);
  MatrixXd g2 = flow_sensitivities(chain, cpf);
  CHECK_THAT(std::abs(g2(1, 2)), WithinAbs(1.0, 1e-9));
  CHECK_THAT(std::abs(g2(0, 2)), WithinAbs(1.0, 1e-9));
}

TEST_CASE("shift factors match AC flow differences on the stressed corridors") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  Injections inj = schedule_injections(nc, md);
  PowerFlowSolution pf = solve_power_flow(nc, inj);
  REQUIRE(pf.converged);
  MatrixXd gsf = flow_sensitivities(nc, pf);
  int slack = nc.slack_index();
  CHECK(gsf.col(slack).cwiseAbs().maxCoeff() == 0.0);

  int l18 = nc.branch_index(18);
  int l36 = nc.branch_index(36);
  double h = 1.0;
  for (int i = 0; i < nc.n_buses(); ++i) {
    if (i == slack) continue;
    Injections up = inj, dn = inj;
    up.p_mw[i] += h;
    dn.p_mw[i] -= h;
    PowerFlowSolution a = solve_warm(nc, up, pf);
    PowerFlowSolution b = solve_warm(nc, dn, pf);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    for (int l : {l18, l36}) {
      double fd = (a.flow_p_from_mw[l] - b.flow_p_from_mw[l]) / (2.0 * h);
      INFO("branch " << nc.branches[l].id << " bus " << nc.buses[i].id);
      CHECK_THAT(gsf(l, i), WithinAbs(fd, 2e-3));
    }
  }
}

TEST_CASE("corridor shift factors concentrate in the receiving pocket") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  PowerFlowSolution pf = solve_power_flow(nc, schedule_injections(nc, md));
  REQUIRE(pf.converged);
  MatrixXd gsf = flow_sensitivities(nc, pf);
  int l36 = nc.branch_index(36);

  std::vector<std::pair<double, int>> mags;
  for (int i = 0; i < nc.n_buses(); ++i)
    if (!nc.buses[i].has_gen) mags.push_back({std::abs(gsf(l36, i)), nc.buses[i].id});
  std::sort(mags.rbegin(), mags.rend());

  std::set<int> top;
  for (int k = 0; k < 5; ++k) top.insert(mags[k].second);
  CHECK(top == std::set<int>({25, 26, 27, 29, 30}));
}

TEST_CASE("per-branch factor offsets cancel for balanced exchanges") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  PowerFlowSolution pf = solve_power_flow(nc, schedule_injections(nc, md));
  REQUIRE(pf.converged);
  MatrixXd gsf = flow_sensitivities(nc, pf);

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd dp(nc.n_buses());
  for (int i = 0; i < dp.size(); ++i) dp[i] = u(rng);
  dp.array() -= dp.mean();
  REQUIRE(std::abs(dp.sum()) < 1e-12);

  for (int l : {0, nc.branch_index(18), nc.branch_index(36)}) {
    double base = gsf.row(l) * dp;
    double c = u(rng) * 10.0;
    double shifted = (gsf.row(l).array() + c).matrix() * dp;
    CHECK_THAT(shifted, WithinAbs(base, 1e-9));
  }
}

TEST_CASE("voltage-correction matrix covers exactly the load buses") {
  NetworkCase nc = bundled_case();
  MatrixXd b = build_bdoubleprime(nc);
  int n_pq = 0;
  for (const auto& bus : nc.buses)
    if (!bus.has_gen) ++n_pq;
  REQUIRE(b.rows() == n_pq);
  REQUIRE(b.rows() == 24);
  CHECK((b - b.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(b.diagonal().minCoeff() > 0.0);
}

TEST_CASE("networks without transformers have no tap columns") {
  NetworkCase nc = two_bus(0.01, 0.1);
  Injections inj{{0.0, -10.0}, {0.0, 0.0}};
  PowerFlowSolution pf = solve_power_flow(nc, inj);
  MatrixXd sens = tap_sensitivities(nc, pf);
  CHECK(sens.cols() == 0);
}

TEST_CASE("raising a tap raises reactive injection at the receiving bus") {
  json j;
  j["base_mva"] = 100.0;
  j["slack_bus"] = 1;
  json br = branch_obj(1, 1, 2, 0.01, 0.1);
  br["transformer"] = true;
  br["tap"] = 1.0;
  j["buses"] = json::array({bus_obj(1, 0.0, true), bus_obj(2, 10.0, false)});
  j["branches"] = json::array({br});
  NetworkCase nc = load_case(j.dump());
  Injections inj{{0.0, -10.0}, {0.0, 0.0}};
  PowerFlowSolution pf = solve_power_flow(nc, inj);
  REQUIRE(pf.converged);
  MatrixXd sens = tap_sensitivities(nc, pf);
  REQUIRE(sens.cols() == 1);
  CHECK(sens(1, 0) > 0.0);
  CHECK(sens(0, 0) < 0.0);
}

TEST_CASE("tap sensitivity matches a held-voltage resolve") {
  json j;
  j["base_mva"] = 100.0;
  j["slack_bus"] = 1;
  json br = branch_obj(1, 1, 2, 0.0, 0.1);
  br["transformer"] = true;
  br["tap"] = 1.0;
  j["buses"] = json::array({bus_obj(1, 0.0, true), bus_obj(2, 5.0, true)});
  j["branches"] = json::array({br});
  NetworkCase nc = load_case(j.dump());
  Injections inj{{0.0, -5.0}, {0.0, 0.0}};
  PowerFlowSolution pf = solve_power_flow(nc, inj);
  REQUIRE(pf.converged);
  MatrixXd sens = tap_sensitivities(nc, pf);

  double h = 0.01;
  PfOptions up, dn;
  up.taps = {1.0 + h};
  dn.taps = {1.0 - h};
  PowerFlowSolution a = solve_power_flow(nc, inj, up);
  PowerFlowSolution b = solve_power_flow(nc, inj, dn);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  double fd = nc.to_pu(a.q_inj_mvar[1] - b.q_inj_mvar[1]) / (2.0 * h);
  CHECK_THAT(sens(1, 0), WithinAbs(fd, 5e-3));
}

TEST_CASE("tap sensitivities match stamp differences at the solved state") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  PowerFlowSolution pf = solve_power_flow(nc, schedule_injections(nc, md));
  REQUIRE(pf.converged);
  MatrixXd sens = tap_sensitivities(nc, pf);
  REQUIRE(sens.cols() == 4);

  std::vector<double> base_taps;
  for (const auto& br : nc.branches) base_taps.push_back(br.tap);
  double h = 1e-4;
  int col = 0;
  for (int l = 0; l < nc.n_branches(); ++l) {
    if (!nc.branches[l].is_transformer) continue;
    std::vector<double> tu = base_taps, td = base_taps;
    tu[l] += h;
    td[l] -= h;
    VectorXd pu_, qu, pd_, qd;
    calc_injections(build_ybus(nc, &tu), pf.v, pf.theta, pu_, qu);
    calc_injections(build_ybus(nc, &td), pf.v, pf.theta, pd_, qd);
    VectorXd fd = (qu - qd) / (2.0 * h);
    for (int i = 0; i < nc.n_buses(); ++i) {
      INFO("transformer " << nc.branches[l].id << " bus " << nc.buses[i].id);
      CHECK_THAT(sens(i, col), WithinAbs(fd[i], 1e-5));
    }
    ++col;
  }
}

TEST_CASE("branch loss segments account for the system losses") {
  NetworkCase nc = bundled_case();
  MarketData md = bundled_market(nc);
  PowerFlowSolution pf = solve_power_flow(nc, schedule_injections(nc, md));
  REQUIRE(pf.converged);
  SensitivityBundle sb = build_sensitivities(nc, pf);

  double sum = 0.0;
  for (const auto& seg : sb.loss_model) {
    sum += seg.loss_mw;
    CHECK(seg.slope * seg.p_mw >= 0.0);
  }
  CHECK_THAT(sum, WithinAbs(pf.total_loss_mw, 1e-6));
  CHECK(sb.transformer_branches.size() == 4);
  CHECK(sb.pq_buses.size() == 24);
  CHECK(sb.loss_sens[nc.slack_index()] == 0.0);
  CHECK(sb.flow_sens.col(nc.slack_index()).cwiseAbs().maxCoeff() == 0.0);
}
