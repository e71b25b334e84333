#pragma once

// Grid, contract, and bid data model: types, file parsing, validation.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbm/common.hpp"

namespace rbm {

using json = nlohmann::ordered_json;

enum class BusKind { Generator, Consumer, Mixed, Passive };
enum class Side { Generator, Consumer };
enum class CurtailMode { BothSides, SellerOnly, BuyerOnly };

inline const char* to_string(CurtailMode m) {
  switch (m) {
    case CurtailMode::BothSides: return "both-sides";
    case CurtailMode::SellerOnly: return "seller-only";
    case CurtailMode::BuyerOnly: return "buyer-only";
  }
  return "?";
}

struct Bus {
  int id = 0;
  double load_p = 0.0;   // MW
  double load_q = 0.0;   // MVAr
  double v_min = 0.85;   // p.u.
  double v_max = 1.10;   // p.u.
  double eta = 0.0;      // load-allocation factor, normalized at load time
  bool eta_given = false;
  double shunt_b = 0.0;  // p.u. shunt susceptance at V = 1
  bool has_gen = false;  // a voltage-regulating machine sits here
  double v_set = 1.0;    // regulated voltage when has_gen
};

struct Branch {
  int id = 0;
  int from_bus = 0, to_bus = 0;
  double r = 0.0, x = 0.0;  // p.u.
  double b_shunt = 0.0;     // total line charging, p.u.
  double flow_limit = 0.0;  // MW, sending end
  bool is_transformer = false;
  double tap = 1.0;
  double tap_min = 0.9, tap_max = 1.1;
};

struct NetworkCase {
  double base_mva = 100.0;
  int slack_bus = 0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;

  int n_buses() const { return static_cast<int>(buses.size()); }
  int n_branches() const { return static_cast<int>(branches.size()); }

  // Position of an external bus id; -1 if unknown.
  int bus_index(int id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : it->second;
  }
  int branch_index(int id) const {
    auto it = br_index_.find(id);
    return it == br_index_.end() ? -1 : it->second;
  }
  int slack_index() const { return bus_index(slack_bus); }

  double to_pu(double mw) const { return mw / base_mva; }
  double from_pu(double pu) const { return pu * base_mva; }

  BusKind kind(int idx) const {
    const Bus& b = buses[idx];
    bool load = b.load_p != 0.0 || b.load_q != 0.0;
    if (b.has_gen && load) return BusKind::Mixed;
    if (b.has_gen) return BusKind::Generator;
    if (load) return BusKind::Consumer;
    return BusKind::Passive;
  }

  void rebuild_indices() {
    index_.clear();
    br_index_.clear();
    for (int i = 0; i < n_buses(); ++i) index_[buses[i].id] = i;
    for (int l = 0; l < n_branches(); ++l) br_index_[branches[l].id] = l;
  }

 private:
  std::map<int, int> index_;
  std::map<int, int> br_index_;
};

struct BidStep {
  double mw = 0.0;  // block size; <= 0 means "span the remaining range"
  double price = 0.0;
};

struct ParticipantBids {
  std::vector<BidStep> incr;  // b+ curve
  std::vector<BidStep> decr;  // b- curve
  std::optional<double> reserve_energy_price;    // b_En, $/MWh
  std::optional<double> reserve_capacity_price;  // b_Rep, $/MW
  std::optional<double> w_plus, w_minus;         // reactive, $/MVArh
};

struct Participant {
  std::string name;
  int bus = 0;
  Side side = Side::Generator;
  double p0 = 0.0, p_min = 0.0, p_max = 0.0;  // MW
  double q0 = 0.0, q_min = 0.0, q_max = 0.0;  // MVAr
  double reserve_mw = 0.0;                    // contracted operating reserve
  ParticipantBids bids;

  int beta() const { return side == Side::Generator ? 0 : 1; }
};

struct BilateralContract {
  std::string id;
  int seller_bus = 0, buyer_bus = 0;
  double amount_mw = 0.0;
  double curtail_price = 0.0;  // $/MW
  CurtailMode mode = CurtailMode::BothSides;
};

struct TapBid {
  int branch = 0;
  double price = 0.0;  // $/step
};

// Schedule base points, limits, bids, contracts, tap bids: the market side of
// one dispatch interval, cross-linked to case buses at load time.
struct MarketData {
  std::vector<Participant> participants;
  std::vector<BilateralContract> contracts;
  std::vector<TapBid> tap_bids;

  const Participant* at_bus(int bus_id) const {
    for (const auto& p : participants)
      if (p.bus == bus_id) return &p;
    return nullptr;
  }
  const Participant* by_name(const std::string& n) const {
    for (const auto& p : participants)
      if (p.name == n) return &p;
    return nullptr;
  }
};

enum class DispatchMode { Normal, Congestion };

struct Scenario {
  std::string name;
  double delta_p_sys = 0.0;  // MW
  double alpha = 1.0;
  DispatchMode mode = DispatchMode::Normal;
  bool curtailment_enabled = false;
  std::vector<std::pair<std::string, CurtailMode>> curtail_overrides;
  std::vector<std::pair<int, double>> branch_limits;    // branch id -> MW
  std::vector<std::pair<int, double>> load_allocation;  // bus id -> eta
};

namespace detail {

inline std::string ctx_path(const std::string& ctx, const std::string& key) {
  return ctx.empty() ? key : ctx + "." + key;
}

inline const json& require(const json& j, const std::string& key,
                           const std::string& ctx) {
  if (!j.contains(key))
    throw ParseError("missing field: " + ctx_path(ctx, key));
  return j.at(key);
}

inline double require_num(const json& j, const std::string& key,
                          const std::string& ctx) {
  const json& v = require(j, key, ctx);
  if (!v.is_number())
    throw ParseError("expected number at " + ctx_path(ctx, key));
  return v.get<double>();
}

inline double opt_num(const json& j, const std::string& key, double dflt) {
  if (!j.contains(key) || j.at(key).is_null()) return dflt;
  return j.at(key).get<double>();
}

inline int require_int(const json& j, const std::string& key,
                       const std::string& ctx) {
  const json& v = require(j, key, ctx);
  if (!v.is_number_integer())
    throw ParseError("expected integer at " + ctx_path(ctx, key));
  return v.get<int>();
}

inline json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false, true);  // allow comments
  if (j.is_discarded()) {
    // Re-parse with exceptions to surface the byte/line position.
    try {
      json probe = json::parse(text, nullptr, true, true);
      (void)probe;
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(what + ": " + e.what());
    }
    throw ParseError(what + ": malformed JSON");
  }
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Case file

inline NetworkCase load_case(const std::string& source) {
  using namespace detail;
  json j = parse_json(source, "case file");

  NetworkCase nc;
  nc.base_mva = require_num(j, "base_mva", "");
  nc.slack_bus = require_int(j, "slack_bus", "");

  const json& jbuses = require(j, "buses", "");
  int bi = 0;
  for (const auto& jb : jbuses) {
    std::string ctx = "buses[" + std::to_string(bi++) + "]";
    Bus b;
    b.id = require_int(jb, "id", ctx);
    b.load_p = require_num(jb, "load_p_mw", ctx);
    b.load_q = require_num(jb, "load_q_mvar", ctx);
    b.v_min = require_num(jb, "v_min", ctx);
    b.v_max = require_num(jb, "v_max", ctx);
    b.shunt_b = opt_num(jb, "shunt_b_pu", 0.0);
    if (jb.contains("eta") && !jb.at("eta").is_null()) {
      b.eta = jb.at("eta").get<double>();
      b.eta_given = true;
    }
    if (jb.contains("gen") && !jb.at("gen").is_null()) {
      b.has_gen = true;
      b.v_set = opt_num(jb.at("gen"), "v_set", 1.0);
    }
    nc.buses.push_back(b);
  }

  const json& jbr = require(j, "branches", "");
  int li = 0;
  for (const auto& jl : jbr) {
    std::string ctx = "branches[" + std::to_string(li++) + "]";
    Branch l;
    l.id = require_int(jl, "id", ctx);
    l.from_bus = require_int(jl, "from", ctx);
    l.to_bus = require_int(jl, "to", ctx);
    l.r = require_num(jl, "r_pu", ctx);
    l.x = require_num(jl, "x_pu", ctx);
    l.b_shunt = opt_num(jl, "b_pu", 0.0);
    l.flow_limit = require_num(jl, "limit_mw", ctx);
    l.is_transformer = jl.contains("transformer") &&
                       !jl.at("transformer").is_null() &&
                       jl.at("transformer").get<bool>();
    l.tap = opt_num(jl, "tap", 1.0);
    l.tap_min = opt_num(jl, "tap_min", 0.9);
    l.tap_max = opt_num(jl, "tap_max", 1.1);
    nc.branches.push_back(l);
  }

  nc.rebuild_indices();

  // Validation: collect everything before throwing.
  std::vector<std::string> bad;
  if (nc.base_mva <= 0) bad.push_back("base_mva must be positive");

  std::set<int> seen;
  for (const auto& b : nc.buses) {
    std::string who = "bus " + std::to_string(b.id) + ": ";
    if (!seen.insert(b.id).second) bad.push_back(who + "duplicate id");
    if (!(b.v_min < b.v_max)) bad.push_back(who + "v_min must be < v_max");
    if (b.v_min < 0.5 || b.v_min > 1.5 || b.v_max < 0.5 || b.v_max > 1.5)
      bad.push_back(who + "voltage bounds outside [0.5, 1.5]");
    if (b.eta_given && b.eta < 0) bad.push_back(who + "eta must be >= 0");
  }

  std::set<int> br_seen;
  for (const auto& l : nc.branches) {
    std::string who = "branch " + std::to_string(l.id) + ": ";
    if (!br_seen.insert(l.id).second) bad.push_back(who + "duplicate id");
    if (l.x == 0.0) bad.push_back(who + "zero reactance");
    if (l.flow_limit <= 0) bad.push_back(who + "flow limit must be positive");
    if (nc.bus_index(l.from_bus) < 0)
      bad.push_back(who + "unknown from bus " + std::to_string(l.from_bus));
    if (nc.bus_index(l.to_bus) < 0)
      bad.push_back(who + "unknown to bus " + std::to_string(l.to_bus));
    if (l.from_bus == l.to_bus) bad.push_back(who + "from == to");
    if (l.is_transformer && !(l.tap_min <= l.tap && l.tap <= l.tap_max))
      bad.push_back(who + "tap outside [tap_min, tap_max]");
  }

  if (nc.bus_index(nc.slack_bus) < 0)
    bad.push_back("slack_bus " + std::to_string(nc.slack_bus) +
                  " is not a bus");
  else if (!nc.buses[nc.slack_index()].has_gen)
    bad.push_back("slack_bus " + std::to_string(nc.slack_bus) +
                  " has no generator");
  int slack_count = 0;
  for (const auto& b : nc.buses)
    if (b.id == nc.slack_bus) slack_count++;
  if (slack_count > 1) bad.push_back("more than one bus matches slack id");

  // Connectivity over the bus graph.
  if (bad.empty() && nc.n_buses() > 0) {
    std::vector<std::vector<int>> adj(nc.n_buses());
    for (const auto& l : nc.branches) {
      int f = nc.bus_index(l.from_bus), t = nc.bus_index(l.to_bus);
      adj[f].push_back(t);
      adj[t].push_back(f);
    }
    std::vector<char> vis(nc.n_buses(), 0);
    std::vector<int> stack{0};
    vis[0] = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : adj[u])
        if (!vis[v]) {
          vis[v] = 1;
          stack.push_back(v);
        }
    }
    for (int i = 0; i < nc.n_buses(); ++i)
      if (!vis[i])
        bad.push_back("network not connected: bus " +
                      std::to_string(nc.buses[i].id) + " unreachable");
  }

  if (!bad.empty()) throw ValidationError(bad);

  // Default eta proportional to current bus load; normalize so the factors
  // sum to exactly one either way.
  double given_sum = 0.0;
  bool any_given = false;
  for (const auto& b : nc.buses)
    if (b.eta_given) {
      any_given = true;
      given_sum += b.eta;
    }
  if (any_given) {
    if (std::abs(given_sum - 1.0) > 1e-9)
      throw ValidationError({"eta values sum to " + std::to_string(given_sum) +
                             ", expected 1"});
  } else {
    double total_load = 0.0;
    for (const auto& b : nc.buses) total_load += b.load_p;
    if (total_load > 0)
      for (auto& b : nc.buses) b.eta = b.load_p / total_load;
  }
  // Pin the sum to 1 exactly by absorbing the rounding residue into the
  // largest factor.
  {
    double s = 0.0;
    int imax = -1;
    double vmax = -1.0;
    for (int i = 0; i < nc.n_buses(); ++i) {
      s += nc.buses[i].eta;
      if (nc.buses[i].eta > vmax) {
        vmax = nc.buses[i].eta;
        imax = i;
      }
    }
    if (imax >= 0 && s != 0.0) nc.buses[imax].eta -= (s - 1.0);
  }

  return nc;
}

inline json serialize_case(const NetworkCase& nc) {
  json j;
  j["base_mva"] = nc.base_mva;
  j["slack_bus"] = nc.slack_bus;
  j["buses"] = json::array();
  for (const auto& b : nc.buses) {
    json jb;
    jb["id"] = b.id;
    jb["load_p_mw"] = b.load_p;
    jb["load_q_mvar"] = b.load_q;
    jb["v_min"] = b.v_min;
    jb["v_max"] = b.v_max;
    jb["eta"] = b.eta;
    if (b.shunt_b != 0.0) jb["shunt_b_pu"] = b.shunt_b;
    if (b.has_gen) jb["gen"] = json{{"v_set", b.v_set}};
    j["buses"].push_back(jb);
  }
  j["branches"] = json::array();
  for (const auto& l : nc.branches) {
    json jl;
    jl["id"] = l.id;
    jl["from"] = l.from_bus;
    jl["to"] = l.to_bus;
    jl["r_pu"] = l.r;
    jl["x_pu"] = l.x;
    jl["b_pu"] = l.b_shunt;
    jl["limit_mw"] = l.flow_limit;
    if (l.is_transformer) {
      jl["transformer"] = true;
      jl["tap"] = l.tap;
      jl["tap_min"] = l.tap_min;
      jl["tap_max"] = l.tap_max;
    }
    j["branches"].push_back(jl);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Market file

namespace detail {

inline std::vector<BidStep> parse_curve(const json& arr, bool increasing,
                                        const std::string& ctx,
                                        std::vector<std::string>& bad) {
  std::vector<BidStep> out;
  double prev = increasing ? -kInf : kInf;
  int k = 0;
  for (const auto& js : arr) {
    BidStep s;
    s.mw = opt_num(js, "mw", 0.0);
    s.price = require_num(js, "price", ctx + "[" + std::to_string(k) + "]");
    if (s.mw <= 0 && arr.size() > 1)
      bad.push_back(ctx + ": multi-step curve needs explicit positive block sizes");
    if (increasing ? s.price < prev : s.price > prev)
      bad.push_back(ctx + ": step prices must be " +
                    (increasing ? std::string("non-decreasing")
                                : std::string("non-increasing")));
    prev = s.price;
    out.push_back(s);
    ++k;
  }
  return out;
}

}  // namespace detail

inline MarketData load_market(const std::string& source,
                              const NetworkCase& nc) {
  using namespace detail;
  json j = parse_json(source, "market file");
  MarketData md;
  std::vector<std::string> bad;

  const json& jp = require(j, "participants", "");
  int pi = 0;
  for (const auto& q : jp) {
    std::string ctx = "participants[" + std::to_string(pi++) + "]";
    Participant p;
    p.bus = require_int(q, "bus", ctx);
    std::string side = require(q, "side", ctx).get<std::string>();
    if (side == "generator")
      p.side = Side::Generator;
    else if (side == "consumer")
      p.side = Side::Consumer;
    else
      throw ParseError(ctx + ".side: expected generator|consumer");
    p.name = (p.side == Side::Generator ? "G-" : "C-") + std::to_string(p.bus);
    p.p0 = require_num(q, "p0_mw", ctx);
    p.p_min = require_num(q, "p_min_mw", ctx);
    p.p_max = require_num(q, "p_max_mw", ctx);
    p.q0 = opt_num(q, "q0", 0.0);
    p.q_min = opt_num(q, "q_min", 0.0);
    p.q_max = opt_num(q, "q_max", 0.0);
    p.reserve_mw = opt_num(q, "reserve_mw", 0.0);
    if (q.contains("bids") && !q.at("bids").is_null()) {
      const json& bj = q.at("bids");
      if (bj.contains("incr"))
        p.bids.incr = parse_curve(bj.at("incr"), true, ctx + ".bids.incr", bad);
      if (bj.contains("decr"))
        p.bids.decr =
            parse_curve(bj.at("decr"), false, ctx + ".bids.decr", bad);
      if (bj.contains("reserve_energy_price") &&
          !bj.at("reserve_energy_price").is_null())
        p.bids.reserve_energy_price = bj.at("reserve_energy_price").get<double>();
      if (bj.contains("reserve_capacity_price") &&
          !bj.at("reserve_capacity_price").is_null())
        p.bids.reserve_capacity_price =
            bj.at("reserve_capacity_price").get<double>();
      if (bj.contains("w_plus") && !bj.at("w_plus").is_null())
        p.bids.w_plus = bj.at("w_plus").get<double>();
      if (bj.contains("w_minus") && !bj.at("w_minus").is_null())
        p.bids.w_minus = bj.at("w_minus").get<double>();
    }
    if (nc.bus_index(p.bus) < 0)
      bad.push_back(p.name + ": unknown bus " + std::to_string(p.bus));
    if (!(p.p_min <= p.p0 && p.p0 <= p.p_max))
      bad.push_back(p.name + ": p0 outside [p_min, p_max]");
    if (!(p.q_min <= p.q0 && p.q0 <= p.q_max))
      bad.push_back(p.name + ": q0 outside [q_min, q_max]");
    if (p.reserve_mw < 0) bad.push_back(p.name + ": negative reserve");
    if (p.p0 + p.reserve_mw > p.p_max + 1e-9)
      bad.push_back(p.name + ": p0 + reserve exceeds p_max");
    md.participants.push_back(p);
  }

  if (j.contains("contracts")) {
    int ci = 0;
    for (const auto& q : j.at("contracts")) {
      std::string ctx = "contracts[" + std::to_string(ci++) + "]";
      BilateralContract c;
      c.id = require(q, "id", ctx).get<std::string>();
      c.seller_bus = require_int(q, "seller_bus", ctx);
      c.buyer_bus = require_int(q, "buyer_bus", ctx);
      c.amount_mw = require_num(q, "amount_mw", ctx);
      c.curtail_price = require_num(q, "curtail_price", ctx);
      std::string m = q.contains("mode") ? q.at("mode").get<std::string>()
                                         : "both-sides";
      if (m == "both-sides")
        c.mode = CurtailMode::BothSides;
      else if (m == "seller-only")
        c.mode = CurtailMode::SellerOnly;
      else if (m == "buyer-only")
        c.mode = CurtailMode::BuyerOnly;
      else
        throw ParseError(ctx + ".mode: expected both-sides|seller-only|buyer-only");
      if (c.amount_mw <= 0) bad.push_back(c.id + ": amount must be positive");
      if (c.curtail_price < 0) bad.push_back(c.id + ": negative curtail price");
      if (c.seller_bus == c.buyer_bus)
        bad.push_back(c.id + ": seller and buyer coincide");
      if (nc.bus_index(c.seller_bus) < 0)
        bad.push_back(c.id + ": unknown seller bus");
      if (nc.bus_index(c.buyer_bus) < 0)
        bad.push_back(c.id + ": unknown buyer bus");
      bool seller_known = false;
      for (const auto& p : md.participants)
        if (p.bus == c.seller_bus && p.side == Side::Generator)
          seller_known = true;
      if (!seller_known)
        bad.push_back(c.id + ": seller bus " + std::to_string(c.seller_bus) +
                      " has no scheduled participant");
      md.contracts.push_back(c);
    }
  }

  if (j.contains("tap_bids")) {
    int ti = 0;
    for (const auto& q : j.at("tap_bids")) {
      std::string ctx = "tap_bids[" + std::to_string(ti++) + "]";
      TapBid t;
      t.branch = require_int(q, "branch", ctx);
      t.price = require_num(q, "price", ctx);
      int bi2 = nc.branch_index(t.branch);
      if (bi2 < 0)
        bad.push_back(ctx + ": unknown branch " + std::to_string(t.branch));
      else if (!nc.branches[bi2].is_transformer)
        bad.push_back(ctx + ": branch " + std::to_string(t.branch) +
                      " is not a transformer");
      md.tap_bids.push_back(t);
    }
  }

  if (!bad.empty()) throw ValidationError(bad);
  return md;
}

// Cross-invariants between case, schedule, and contracts. Report-returning:
// callers decide whether a violation is fatal.
inline ValidationReport validate_consistency(const NetworkCase& nc,
                                             const MarketData& md) {
  ValidationReport rep;
  for (const auto& p : md.participants) {
    if (p.p0 + p.reserve_mw > p.p_max + 1e-9)
      rep.add(p.name + ": p0 + reserve > p_max (" + fmt6(p.p0) + " + " +
              fmt6(p.reserve_mw) + " > " + fmt6(p.p_max) + ")");
    double prev_incr = -kInf, prev_decr = kInf;
    for (const auto& s : p.bids.incr) {
      if (s.price < prev_incr)
        rep.add(p.name + ": incremental bid curve not non-decreasing");
      prev_incr = s.price;
    }
    for (const auto& s : p.bids.decr) {
      if (s.price > prev_decr)
        rep.add(p.name + ": decremental bid curve not non-increasing");
      prev_decr = s.price;
    }
  }
  // Bilateral obligations must fit inside each seller's base point.
  std::map<int, double> sold;
  for (const auto& c : md.contracts) sold[c.seller_bus] += c.amount_mw;
  for (const auto& [bus, amount] : sold) {
    const Participant* p = nullptr;
    for (const auto& q : md.participants)
      if (q.bus == bus && q.side == Side::Generator) p = &q;
    if (!p) {
      rep.add("contracts sold from bus " + std::to_string(bus) +
              " with no scheduled seller");
      continue;
    }
    if (amount > p->p0 + 1e-9)
      rep.add(p->name + ": bilateral exceeds base point (" + fmt6(amount) +
              " > " + fmt6(p->p0) + ")");
  }
  (void)nc;
  return rep;
}

// ---------------------------------------------------------------------------
// Scenario file

inline Scenario load_scenario(const std::string& source, const NetworkCase& nc,
                              const MarketData& md) {
  using namespace detail;
  json j = parse_json(source, "scenario file");
  Scenario sc;
  std::vector<std::string> bad;
  sc.name = j.contains("name") ? j.at("name").get<std::string>() : "scenario";
  sc.delta_p_sys = require_num(j, "delta_p_sys_mw", "");
  sc.alpha = opt_num(j, "alpha", 1.0);
  if (sc.alpha < 0.0 || sc.alpha > 1.0)
    bad.push_back("alpha outside [0, 1]");
  std::string mode =
      j.contains("mode") ? j.at("mode").get<std::string>() : "normal";
  if (mode == "normal")
    sc.mode = DispatchMode::Normal;
  else if (mode == "congestion")
    sc.mode = DispatchMode::Congestion;
  else
    throw ParseError("mode: expected normal|congestion");
  if (j.contains("curtailment") && !j.at("curtailment").is_null()) {
    const json& cj = j.at("curtailment");
    sc.curtailment_enabled = cj.contains("enabled") &&
                             cj.at("enabled").get<bool>();
    if (cj.contains("overrides"))
      for (const auto& o : cj.at("overrides")) {
        std::string id = require(o, "contract", "curtailment.overrides")
                             .get<std::string>();
        std::string m = require(o, "mode", "curtailment.overrides")
                            .get<std::string>();
        CurtailMode cm = m == "seller-only"  ? CurtailMode::SellerOnly
                         : m == "buyer-only" ? CurtailMode::BuyerOnly
                                             : CurtailMode::BothSides;
        bool known = false;
        for (const auto& c : md.contracts)
          if (c.id == id) known = true;
        if (!known) bad.push_back("curtailment override: unknown contract " + id);
        sc.curtail_overrides.emplace_back(id, cm);
      }
  }
  if (j.contains("branch_limits"))
    for (const auto& o : j.at("branch_limits")) {
      int br = require_int(o, "branch", "branch_limits");
      double lim = require_num(o, "limit_mw", "branch_limits");
      if (nc.branch_index(br) < 0)
        bad.push_back("branch_limits: unknown branch " + std::to_string(br));
      if (lim <= 0) bad.push_back("branch_limits: non-positive limit");
      sc.branch_limits.emplace_back(br, lim);
    }
  if (j.contains("load_allocation")) {
    double s = 0.0;
    for (const auto& o : j.at("load_allocation")) {
      int bus = require_int(o, "bus", "load_allocation");
      double eta = require_num(o, "eta", "load_allocation");
      if (nc.bus_index(bus) < 0)
        bad.push_back("load_allocation: unknown bus " + std::to_string(bus));
      s += eta;
      sc.load_allocation.emplace_back(bus, eta);
    }
    if (std::abs(s - 1.0) > 1e-9)
      bad.push_back("load_allocation etas sum to " + fmt6(s) + ", expected 1");
  }
  if (!bad.empty()) throw ValidationError(bad);
  return sc;
}

// Effective per-bus share of the system load change, as a vector over bus
// positions. Uses the scenario override when present, case etas otherwise.
inline std::vector<double> load_shares(const NetworkCase& nc,
                                       const Scenario& sc) {
  std::vector<double> eta(nc.n_buses(), 0.0);
  if (!sc.load_allocation.empty()) {
    for (const auto& [bus, e] : sc.load_allocation)
      eta[nc.bus_index(bus)] = e;
  } else {
    for (int i = 0; i < nc.n_buses(); ++i) eta[i] = nc.buses[i].eta;
  }
  return eta;
}

// Branch flow limit with scenario overrides applied, MW.
inline double effective_limit(const NetworkCase& nc, const Scenario& sc,
                              int branch_pos) {
  double lim = nc.branches[branch_pos].flow_limit;
  for (const auto& [id, v] : sc.branch_limits)
    if (id == nc.branches[branch_pos].id) lim = v;
  return lim;
}

inline CurtailMode effective_mode(const BilateralContract& c,
                                  const Scenario& sc) {
  CurtailMode m = c.mode;
  for (const auto& [id, cm] : sc.curtail_overrides)
    if (id == c.id) m = cm;
  return m;
}

}  // namespace rbm
