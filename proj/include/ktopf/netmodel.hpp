#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ktopf/common.hpp"

namespace ktopf {

using json = nlohmann::ordered_json;

/// All electrical quantities are per-unit on the system base; angles in
/// radians. Buses are indexed densely 0..N-1; original case ids live in
/// Network::bus_ids.
struct Bus {
  int id = 0;           // original case id
  double g_shunt = 0.0; // G_sh
  double b_shunt = 0.0; // B_sh
  double p_demand = 0.0;
  double q_demand = 0.0;
  double v_min = 0.94;
  double v_max = 1.06;
};

/// The eight admittance coefficients of a branch's two-port model.
struct BranchConstants {
  double g_ff = 0, b_ff = 0;
  double g_ft = 0, b_ft = 0;
  double g_tf = 0, b_tf = 0;
  double g_tt = 0, b_tt = 0;
};

struct Branch {
  int from_bus = 0;  // internal index
  int to_bus = 0;    // internal index
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap = 1.0;    // ratio magnitude, > 0
  double shift = 0.0;  // radians
  double s_max = 0.0;  // apparent-power rating; <= 0 means unlimited
  BranchConstants k;

  bool has_limit() const { return s_max > 0.0; }
};

inline BranchConstants compute_branch_constants(const Branch& br) {
  using cd = std::complex<double>;
  const cd ys = 1.0 / cd(br.r, br.x);
  const cd ych(0.0, br.b_charging / 2.0);
  const cd rot(std::cos(br.shift), std::sin(br.shift));  // e^{+j*shift}
  const double t2 = br.tap * br.tap;

  BranchConstants k;
  const cd yff = (ys + ych) / t2;
  const cd yft = -ys * rot / br.tap;        // -ys / (tap * e^{-j*shift})
  const cd ytf = -ys * std::conj(rot) / br.tap;
  const cd ytt = ys + ych;
  k.g_ff = yff.real(); k.b_ff = yff.imag();
  k.g_ft = yft.real(); k.b_ft = yft.imag();
  k.g_tf = ytf.real(); k.b_tf = ytf.imag();
  k.g_tt = ytt.real(); k.b_tt = ytt.imag();
  return k;
}

struct Generator {
  int bus = 0;  // internal index
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;
  double cost_quadratic = 0.0;  // $/pu^2
  double cost_linear = 0.0;     // $/pu
  double cost_constant = 0.0;   // $
  double v_setpoint = 1.0;      // case voltage setpoint (Vg)
  double p_initial = 0.0;       // case dispatch (Pg), used as a PF default

  double cost(double p) const {
    return cost_quadratic * p * p + cost_linear * p + cost_constant;
  }
};

/// Immutable grid description. Construct via the MATPOWER parser or the JSON
/// schema, then treat as read-only; safe to share across threads.
struct Network {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  int slack_bus = 0;                // internal index
  std::vector<int> bus_ids;         // internal index -> original id
  std::vector<int> gen_bus_list;    // sorted unique internal bus indices with >=1 generator

  int n_buses() const { return static_cast<int>(buses.size()); }
  int n_branches() const { return static_cast<int>(branches.size()); }
  int n_gens() const { return static_cast<int>(generators.size()); }
  int n_gen_buses() const { return static_cast<int>(gen_bus_list.size()); }

  /// Index of the designated slack unit: first generator at the slack bus.
  int slack_gen() const {
    for (int g = 0; g < n_gens(); ++g)
      if (generators[static_cast<size_t>(g)].bus == slack_bus) return g;
    return -1;
  }

  /// Position of an internal bus index within gen_bus_list, -1 if absent.
  int gen_bus_pos(int bus) const {
    auto it = std::lower_bound(gen_bus_list.begin(), gen_bus_list.end(), bus);
    if (it == gen_bus_list.end() || *it != bus) return -1;
    return static_cast<int>(it - gen_bus_list.begin());
  }

  /// Recompute derived data (branch constants, generator-bus list). Call
  /// after any manual construction or mutation of the raw fields.
  void finalize() {
    for (auto& br : branches) br.k = compute_branch_constants(br);
    gen_bus_list.clear();
    for (const auto& g : generators) gen_bus_list.push_back(g.bus);
    std::sort(gen_bus_list.begin(), gen_bus_list.end());
    gen_bus_list.erase(std::unique(gen_bus_list.begin(), gen_bus_list.end()),
                       gen_bus_list.end());
    if (bus_ids.size() != buses.size()) {
      bus_ids.resize(buses.size());
      for (size_t i = 0; i < buses.size(); ++i) bus_ids[i] = buses[i].id;
    }
  }
};

/// Structural diagnostics; an empty list means the network satisfies all
/// type invariants and is connected.
inline std::vector<std::string> validate_network(const Network& net) {
  std::vector<std::string> diags;
  const int nb = net.n_buses();

  for (int i = 0; i < nb; ++i) {
    const Bus& b = net.buses[static_cast<size_t>(i)];
    if (!(b.v_min > 0.0))
      diags.push_back("bus " + std::to_string(b.id) + ": v_min must be positive");
    if (b.v_min > b.v_max)
      diags.push_back("bus " + std::to_string(b.id) + ": v_min exceeds v_max");
  }
  for (size_t l = 0; l < net.branches.size(); ++l) {
    const Branch& br = net.branches[l];
    const std::string tag = "branch " + std::to_string(l);
    if (br.from_bus < 0 || br.from_bus >= nb || br.to_bus < 0 || br.to_bus >= nb) {
      diags.push_back(tag + ": endpoint out of range");
      continue;
    }
    if (br.from_bus == br.to_bus) diags.push_back(tag + ": from and to coincide");
    if (br.x == 0.0) diags.push_back(tag + ": zero series reactance");
    if (!(br.tap > 0.0)) diags.push_back(tag + ": tap ratio must be positive");
    if (br.s_max < 0.0) diags.push_back(tag + ": negative rating");
  }
  for (size_t g = 0; g < net.generators.size(); ++g) {
    const Generator& gen = net.generators[g];
    const std::string tag = "generator " + std::to_string(g);
    if (gen.bus < 0 || gen.bus >= nb) {
      diags.push_back(tag + ": bus index out of range");
      continue;
    }
    if (gen.p_min > gen.p_max) diags.push_back(tag + ": p_min exceeds p_max");
    if (gen.q_min > gen.q_max) diags.push_back(tag + ": q_min exceeds q_max");
    if (gen.cost_quadratic < 0.0) diags.push_back(tag + ": concave cost");
  }
  if (net.generators.empty()) diags.push_back("network: no generators");
  if (net.slack_bus < 0 || net.slack_bus >= nb) {
    diags.push_back("network: slack bus out of range");
  } else if (net.slack_gen() < 0) {
    diags.push_back("network: slack bus " +
                    std::to_string(net.buses[static_cast<size_t>(net.slack_bus)].id) +
                    " hosts no generator");
  }

  // connectivity over the branch graph
  if (nb > 0) {
    std::vector<char> seen(static_cast<size_t>(nb), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    std::vector<std::vector<int>> adj(static_cast<size_t>(nb));
    for (const auto& br : net.branches) {
      if (br.from_bus < 0 || br.from_bus >= nb || br.to_bus < 0 || br.to_bus >= nb)
        continue;
      adj[static_cast<size_t>(br.from_bus)].push_back(br.to_bus);
      adj[static_cast<size_t>(br.to_bus)].push_back(br.from_bus);
    }
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int w : adj[static_cast<size_t>(u)])
        if (!seen[static_cast<size_t>(w)]) {
          seen[static_cast<size_t>(w)] = 1;
          ++count;
          q.push(w);
        }
    }
    if (count != nb)
      diags.push_back("network: graph has " + std::to_string(nb - count) +
                      " bus(es) unreachable from bus " +
                      std::to_string(net.buses[0].id));
  }
  return diags;
}

// --- canonical JSON schema (documented in README) ---

inline json network_to_json(const Network& net) {
  json j;
  j["base_mva"] = net.base_mva;
  j["buses"] = json::array();
  for (const auto& b : net.buses) {
    j["buses"].push_back({{"id", b.id},
                          {"g_shunt", b.g_shunt},
                          {"b_shunt", b.b_shunt},
                          {"p_demand", b.p_demand},
                          {"q_demand", b.q_demand},
                          {"v_min", b.v_min},
                          {"v_max", b.v_max}});
  }
  j["branches"] = json::array();
  for (const auto& br : net.branches) {
    j["branches"].push_back({{"from", net.bus_ids[static_cast<size_t>(br.from_bus)]},
                             {"to", net.bus_ids[static_cast<size_t>(br.to_bus)]},
                             {"r", br.r},
                             {"x", br.x},
                             {"b_charging", br.b_charging},
                             {"tap", br.tap},
                             {"shift", br.shift},
                             {"s_max", br.s_max}});
  }
  j["generators"] = json::array();
  for (const auto& g : net.generators) {
    j["generators"].push_back({{"bus", net.bus_ids[static_cast<size_t>(g.bus)]},
                               {"p_min", g.p_min},
                               {"p_max", g.p_max},
                               {"q_min", g.q_min},
                               {"q_max", g.q_max},
                               {"cost_quadratic", g.cost_quadratic},
                               {"cost_linear", g.cost_linear},
                               {"cost_constant", g.cost_constant},
                               {"v_setpoint", g.v_setpoint},
                               {"p_initial", g.p_initial}});
  }
  j["slack_bus"] = net.bus_ids[static_cast<size_t>(net.slack_bus)];
  return j;
}

inline Network network_from_json(const json& j) {
  Network net;
  net.base_mva = j.at("base_mva").get<double>();
  std::vector<int> ids;
  for (const auto& jb : j.at("buses")) {
    Bus b;
    b.id = jb.at("id").get<int>();
    b.g_shunt = jb.at("g_shunt").get<double>();
    b.b_shunt = jb.at("b_shunt").get<double>();
    b.p_demand = jb.at("p_demand").get<double>();
    b.q_demand = jb.at("q_demand").get<double>();
    b.v_min = jb.at("v_min").get<double>();
    b.v_max = jb.at("v_max").get<double>();
    net.buses.push_back(b);
    ids.push_back(b.id);
  }
  auto index_of = [&ids](int id) {
    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end())
      throw std::runtime_error("network json references unknown bus " + std::to_string(id));
    return static_cast<int>(it - ids.begin());
  };
  for (const auto& jb : j.at("branches")) {
    Branch br;
    br.from_bus = index_of(jb.at("from").get<int>());
    br.to_bus = index_of(jb.at("to").get<int>());
    br.r = jb.at("r").get<double>();
    br.x = jb.at("x").get<double>();
    br.b_charging = jb.at("b_charging").get<double>();
    br.tap = jb.at("tap").get<double>();
    br.shift = jb.at("shift").get<double>();
    br.s_max = jb.at("s_max").get<double>();
    net.branches.push_back(br);
  }
  for (const auto& jg : j.at("generators")) {
    Generator g;
    g.bus = index_of(jg.at("bus").get<int>());
    g.p_min = jg.at("p_min").get<double>();
    g.p_max = jg.at("p_max").get<double>();
    g.q_min = jg.at("q_min").get<double>();
    g.q_max = jg.at("q_max").get<double>();
    g.cost_quadratic = jg.at("cost_quadratic").get<double>();
    g.cost_linear = jg.at("cost_linear").get<double>();
    g.cost_constant = jg.at("cost_constant").get<double>();
    g.v_setpoint = jg.at("v_setpoint").get<double>();
    g.p_initial = jg.at("p_initial").get<double>();
    net.generators.push_back(g);
  }
  net.slack_bus = index_of(j.at("slack_bus").get<int>());
  net.bus_ids = ids;
  net.finalize();
  return net;
}

/// Stable content hash used to tie datasets to the network they were
/// generated from.
inline std::string network_fingerprint(const Network& net) {
  return to_hex(fnv1a64(network_to_json(net).dump()));
}

}  // namespace ktopf
