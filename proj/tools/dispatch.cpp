// Command-line surface for the dispatch engine: validate inputs, run power
// flows and dispatch scenarios, score suites, and re-emit stored results as
// plot-ready tables. Exit codes: 0 success, 1 input validation failure,
// 2 solver failure, 3 expectation mismatch in suite mode.

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "rbm/coordinator.hpp"

namespace {

using namespace rbm;

constexpr double kPi = 3.14159265358979323846;

std::string fmt_col(const std::string& s, size_t width) {
  std::string r = s;
  if (r.size() < width)
    r.append(width - r.size(), ' ');
  else
    r += ' ';
  return r;
}

int log_level() {
  const char* e = std::getenv("DISPATCH_LOG");
  if (!e || !*e) return 0;
  std::string s = e;
  if (s == "0" || s == "quiet") return 0;
  if (s == "1" || s == "audit") return 1;
  return 2;
}

void print_audit(const DispatchResult& r) {
  int lvl = log_level();
  if (lvl < 1) return;
  for (const AuditEntry& a : r.audit) {
    std::cerr << "iteration " << a.iteration << ": balancing " << a.p_status
              << ", reactive " << (a.q_status.empty() ? "-" : a.q_status)
              << ", overload " << fmt6(a.branch_violation_mw)
              << " MW, band exit " << fmt6(a.voltage_violation)
              << ", curtailment " << (a.curtailment_active ? "on" : "off");
    if (lvl >= 2) {
      std::cerr << ", damping " << fmt6(a.damping);
      if (!a.note.empty()) std::cerr << ", note: " << a.note;
    }
    std::cerr << "\n";
  }
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::cout << text;
  else
    write_text_file(out_path, text);
}

std::string dispatch_table(const NetworkCase& nc, const MarketData& md,
                           const Scenario& sc, const DispatchResult& r) {
  std::ostringstream os;
  os << "scenario " << r.scenario << "  status " << to_string(r.status)
     << "  iterations " << r.outer_iterations << "\n";
  os << "system lambda " << fmt6(r.p.lambda) << " $/MWh  total cost "
     << fmt6(r.p.total_cost) << " $\n\n";
  os << "participant   PEAM contracts (MW)     Calling Upon (MW)   "
        "Replacement (MW)\n";
  os << "              dP+         dP-         reserve energy      "
        "capacity\n";
  for (size_t p = 0; p < md.participants.size(); ++p) {
    const ParticipantDispatch& d = r.p.by_participant[p];
    os << fmt_col(md.participants[p].name, 14) << fmt_col(fmt6(d.dp_plus), 12)
       << fmt_col(fmt6(d.dp_minus), 12) << fmt_col(fmt6(d.dp_res), 20)
       << fmt6(d.dp_rep) << "\n";
  }
  if (!md.contracts.empty()) {
    os << "\nbilateral curtailment (MW)\n";
    for (size_t c = 0; c < md.contracts.size(); ++c)
      os << fmt_col(md.contracts[c].id, 14)
         << fmt_col(fmt6(r.p.contract_curtail_mw[c]), 12) << "("
         << to_string(md.contracts[c].mode) << ")\n";
  }
  if (!sc.branch_limits.empty()) {
    os << "\nmonitored branches\n";
    for (const auto& [id, lim] : sc.branch_limits) {
      int l = nc.branch_index(id);
      double dual = r.p.mu_branch_max.size() == nc.n_branches()
                        ? r.p.mu_branch_max[l] - r.p.mu_branch_min[l]
                        : 0.0;
      os << "branch " << id << ": " << fmt6(r.final_pf.flow_p_from_mw[l])
         << " / " << fmt6(effective_limit(nc, sc, l)) << " MW, dual "
         << fmt6(dual) << " $/MWh\n";
    }
  }
  return os.str();
}

std::string pf_table(const NetworkCase& nc, const PowerFlowSolution& pf) {
  std::ostringstream os;
  os << "converged " << (pf.converged ? "yes" : "no") << "  iterations "
     << pf.iterations << "  losses " << fmt6(pf.total_loss_mw) << " MW\n";
  os << "bus     V (pu)      theta (deg)   P (MW)      Q (MVAr)\n";
  for (int i = 0; i < nc.n_buses(); ++i)
    os << fmt_col(std::to_string(nc.buses[i].id), 8)
       << fmt_col(fmt6(pf.v[i]), 12)
       << fmt_col(fmt6(pf.theta[i] * 180.0 / kPi), 14)
       << fmt_col(fmt6(pf.p_inj_mw[i]), 12) << fmt6(pf.q_inj_mvar[i]) << "\n";
  return os.str();
}

json pf_json(const NetworkCase& nc, const PowerFlowSolution& pf) {
  json j;
  j["converged"] = pf.converged;
  j["iterations"] = pf.iterations;
  j["loss_mw"] = round6(pf.total_loss_mw);
  json buses = json::array();
  for (int i = 0; i < nc.n_buses(); ++i)
    buses.push_back({{"bus", nc.buses[i].id},
                     {"v", round6(pf.v[i])},
                     {"theta_deg", round6(pf.theta[i] * 180.0 / kPi)},
                     {"p_mw", round6(pf.p_inj_mw[i])},
                     {"q_mvar", round6(pf.q_inj_mvar[i])}});
  j["buses"] = buses;
  json flows = json::array();
  for (int l = 0; l < nc.n_branches(); ++l)
    flows.push_back({{"branch", nc.branches[l].id},
                     {"p_from_mw", round6(pf.flow_p_from_mw[l])},
                     {"q_from_mvar", round6(pf.flow_q_from_mvar[l])}});
  j["flows"] = flows;
  return j;
}

// Rebuild the plot-ready series from a stored result document.
std::string report_series(const json& doc, const std::string& series) {
  std::ostringstream os;
  if (series == "lmp") {
    std::map<int, double> rho_q;
    if (doc.contains("q_dispatch") && doc["q_dispatch"].contains("prices"))
      for (const auto& row : doc["q_dispatch"]["prices"])
        rho_q[row["bus"].get<int>()] = row["rho_q"].get<double>();
    os << "bus, lambda, loss_component, congestion_component, rho_p, rho_q\n";
    for (const auto& row : doc.at("prices")) {
      int bus = row["bus"].get<int>();
      os << bus << ", " << fmt6(row["lambda"].get<double>()) << ", "
         << fmt6(row["loss"].get<double>()) << ", "
         << fmt6(row["congestion"].get<double>()) << ", "
         << fmt6(row["rho"].get<double>()) << ", "
         << fmt6(rho_q.count(bus) ? rho_q[bus] : 0.0) << "\n";
    }
  } else if (series == "flows") {
    os << "branch, mw, limit, dual\n";
    for (const auto& row : doc.at("flows"))
      os << row["branch"].get<int>() << ", " << fmt6(row["mw"].get<double>())
         << ", " << fmt6(row["limit"].get<double>()) << ", "
         << fmt6(row["dual"].get<double>()) << "\n";
  } else if (series == "dispatch") {
    os << "participant, dp_plus, dp_minus, dp_res, dp_rep\n";
    for (const auto& row : doc.at("p_dispatch").at("participants"))
      os << row["name"].get<std::string>() << ", "
         << fmt6(row["dp_plus"].get<double>()) << ", "
         << fmt6(row["dp_minus"].get<double>()) << ", "
         << fmt6(row["dp_res"].get<double>()) << ", "
         << fmt6(row["dp_rep"].get<double>()) << "\n";
  } else {
    throw ParseError("unknown series: " + series +
                     " (expected lmp|flows|dispatch)");
  }
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"real-time balancing dispatch engine"};
  app.require_subcommand(1);

  std::string case_path, market_path, out_path, expected_path;
  std::vector<std::string> scenario_paths;
  std::string format = "json", series = "lmp", in_path;
  std::string dump_lp_path, prices_path;
  double alpha = -1.0;
  int max_iter = 10;
  bool ipm = false;

  auto add_common = [&](CLI::App* cmd, bool need_market, bool need_scenario) {
    cmd->add_option("--case", case_path, "network case file")->required();
    auto* m = cmd->add_option("--market", market_path, "market data file");
    if (need_market) m->required();
    auto* s = cmd->add_option("--scenario", scenario_paths, "scenario file");
    if (need_scenario) s->required();
  };

  CLI::App* validate =
      app.add_subcommand("validate", "check inputs and cross-invariants");
  add_common(validate, false, false);

  CLI::App* pf = app.add_subcommand("pf", "solve the AC power flow");
  add_common(pf, false, false);
  pf->add_option("--out", out_path, "output path (default stdout)");
  pf->add_option("--format", format, "json|csv|table");

  CLI::App* run = app.add_subcommand("run", "clear one dispatch scenario");
  add_common(run, true, true);
  run->add_option("--out", out_path, "output path (default stdout)");
  run->add_option("--format", format, "json|csv|table");
  run->add_option("--alpha", alpha, "replacement-to-reserve ratio override");
  run->add_option("--max-iter", max_iter, "outer iteration budget");
  run->add_flag("--ipm", ipm, "use the interior-point solver");
  run->add_option("--dump-lp", dump_lp_path,
                  "write first-pass programs as text");
  run->add_option("--prices", prices_path, "write the nodal price table CSV");

  CLI::App* suite =
      app.add_subcommand("suite", "run scenarios against expected values");
  add_common(suite, true, true);
  suite->add_option("--expected", expected_path, "expected-values JSON");
  suite->add_option("--out", out_path, "report path (default stdout)");
  suite->add_option("--alpha", alpha, "replacement-to-reserve ratio override");
  suite->add_flag("--ipm", ipm, "use the interior-point solver");

  CLI::App* report =
      app.add_subcommand("report", "re-emit a stored result as CSV");
  report->add_option("--in", in_path, "stored result JSON")->required();
  report->add_option("--format", format, "csv");
  report->add_option("--series", series, "lmp|flows|dispatch");
  report->add_option("--out", out_path, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*validate) {
      NetworkCase nc = load_case(read_text_file(case_path));
      std::vector<std::string> issues;
      if (!market_path.empty()) {
        MarketData md = load_market(read_text_file(market_path), nc);
        ValidationReport rep = validate_consistency(nc, md);
        issues = rep.issues;
        for (const std::string& sp : scenario_paths)
          load_scenario(read_text_file(sp), nc, md);
      }
      if (!issues.empty()) {
        std::cerr << issues.size() << " issue(s):\n";
        for (const std::string& s : issues) std::cerr << "  - " << s << "\n";
        return 1;
      }
      std::cout << "ok\n";
      return 0;
    }

    if (*pf) {
      NetworkCase nc = load_case(read_text_file(case_path));
      Injections inj;
      if (!market_path.empty()) {
        MarketData md = load_market(read_text_file(market_path), nc);
        inj = schedule_injections(nc, md);
        if (!scenario_paths.empty()) {
          Scenario sc = load_scenario(read_text_file(scenario_paths[0]), nc,
                                      md);
          apply_load_change(inj, load_shares(nc, sc), sc.delta_p_sys);
        }
      } else {
        inj.p_mw.assign(nc.n_buses(), 0.0);
        inj.q_mvar.assign(nc.n_buses(), 0.0);
        for (int i = 0; i < nc.n_buses(); ++i) {
          inj.p_mw[i] = -nc.buses[i].load_p;
          inj.q_mvar[i] = -nc.buses[i].load_q;
        }
      }
      PowerFlowSolution sol = solve_power_flow(nc, inj);
      if (format == "table")
        emit(pf_table(nc, sol), out_path);
      else
        emit(pf_json(nc, sol).dump(2) + "\n", out_path);
      return sol.converged ? 0 : 2;
    }

    if (*run) {
      NetworkCase nc = load_case(read_text_file(case_path));
      MarketData md = load_market(read_text_file(market_path), nc);
      Scenario sc = load_scenario(read_text_file(scenario_paths[0]), nc, md);
      RunOptions opt;
      opt.max_outer = max_iter;
      opt.use_interior_point = ipm;
      opt.capture_lp_text = !dump_lp_path.empty();
      if (alpha >= 0.0) opt.alpha = alpha;
      DispatchResult r = run_dispatch(nc, md, sc, opt);
      print_audit(r);
      if (!dump_lp_path.empty())
        write_text_file(dump_lp_path, "# balancing program\n" + r.lp_text_p +
                                          "\n# reactive program\n" +
                                          r.lp_text_q);
      if (!prices_path.empty())
        write_text_file(prices_path, price_table_csv(nc, r.prices));
      if (format == "table")
        emit(dispatch_table(nc, md, sc, r), out_path);
      else if (format == "csv")
        emit(price_table_csv(nc, r.prices), out_path);
      else
        emit(render_result_json(nc, md, sc, r).dump(2) + "\n", out_path);
      if (!r.converged()) {
        std::cerr << "dispatch " << to_string(r.status);
        if (!r.audit.empty() && !r.audit.back().note.empty())
          std::cerr << ": " << r.audit.back().note;
        std::cerr << "\n";
        return 2;
      }
      return 0;
    }

    if (*suite) {
      NetworkCase nc = load_case(read_text_file(case_path));
      MarketData md = load_market(read_text_file(market_path), nc);
      std::vector<Scenario> scs;
      for (const std::string& sp : scenario_paths)
        scs.push_back(load_scenario(read_text_file(sp), nc, md));
      json expected = json::object();
      if (!expected_path.empty())
        expected = json::parse(read_text_file(expected_path));
      RunOptions opt;
      opt.use_interior_point = ipm;
      if (alpha >= 0.0) opt.alpha = alpha;
      SuiteReport rep = run_suite(nc, md, scs, expected, opt);
      json doc;
      doc["all_ok"] = rep.all_ok();
      json entries = json::array();
      bool solver_failed = false, mismatched = false;
      for (const SuiteEntry& e : rep.entries) {
        json je;
        je["scenario"] = e.scenario;
        je["status"] = to_string(e.status);
        je["lambda"] = round6(e.lambda);
        je["total_cost"] = round6(e.total_cost);
        je["mismatches"] = e.mismatches;
        if (!e.error.empty()) je["error"] = e.error;
        je["result"] = e.result;
        entries.push_back(je);
        if (!e.error.empty() || e.status != RunStatus::Converged)
          solver_failed = true;
        if (!e.mismatches.empty()) mismatched = true;
        if (log_level() >= 1) {
          std::cerr << e.scenario << ": " << to_string(e.status)
                    << ", lambda " << fmt6(e.lambda) << ", cost "
                    << fmt6(e.total_cost) << ", "
                    << (e.ok() ? "ok" : "NOT OK") << "\n";
          for (const std::string& m : e.mismatches)
            std::cerr << "    " << m << "\n";
        }
      }
      doc["entries"] = entries;
      emit(doc.dump(2) + "\n", out_path);
      if (solver_failed) return 2;
      if (mismatched) return 3;
      return 0;
    }

    if (*report) {
      json doc = json::parse(read_text_file(in_path));
      emit(report_series(doc, series), out_path);
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
