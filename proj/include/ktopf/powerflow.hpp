#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "ktopf/netmodel.hpp"

namespace ktopf {

struct BranchFlow {
  double p_from = 0, q_from = 0;
  double p_to = 0, q_to = 0;
};

/// First-order sensitivities of the four branch flows. From-side entries are
/// taken with respect to (v_n, v_m, theta_nm); to-side entries with respect
/// to (v_m, v_n, theta_mn), where theta_mn = -theta_nm.
struct BranchPartials {
  double dpf_dvn = 0, dpf_dvm = 0, dpf_dth = 0;
  double dqf_dvn = 0, dqf_dvm = 0, dqf_dth = 0;
  double dpt_dvm = 0, dpt_dvn = 0, dpt_dth = 0;
  double dqt_dvm = 0, dqt_dvn = 0, dqt_dth = 0;
};

inline BranchFlow branch_flow(const BranchConstants& k, double vn, double vm,
                              double th_nm) {
  const double c = std::cos(th_nm), s = std::sin(th_nm);
  BranchFlow f;
  f.p_from = vn * vn * k.g_ff + vn * vm * (k.g_ft * c + k.b_ft * s);
  f.q_from = -vn * vn * k.b_ff + vn * vm * (k.g_ft * s - k.b_ft * c);
  // to side sees the angle difference with opposite sign
  const double c2 = c, s2 = -s;
  f.p_to = vm * vm * k.g_tt + vn * vm * (k.g_tf * c2 + k.b_tf * s2);
  f.q_to = -vm * vm * k.b_tt + vn * vm * (k.g_tf * s2 - k.b_tf * c2);
  return f;
}

inline BranchPartials branch_partials(const BranchConstants& k, double vn,
                                      double vm, double th_nm) {
  const double c = std::cos(th_nm), s = std::sin(th_nm);
  BranchPartials d;
  d.dpf_dvn = 2.0 * k.g_ff * vn + vm * (k.g_ft * c + k.b_ft * s);
  d.dpf_dvm = vn * (k.g_ft * c + k.b_ft * s);
  d.dpf_dth = vn * vm * (-k.g_ft * s + k.b_ft * c);
  d.dqf_dvn = -2.0 * k.b_ff * vn + vm * (k.g_ft * s - k.b_ft * c);
  d.dqf_dvm = vn * (k.g_ft * s - k.b_ft * c);
  d.dqf_dth = vn * vm * (k.g_ft * c + k.b_ft * s);
  const double c2 = c, s2 = -s;  // cos/sin of theta_mn
  d.dpt_dvm = 2.0 * k.g_tt * vm + vn * (k.g_tf * c2 + k.b_tf * s2);
  d.dpt_dvn = vm * (k.g_tf * c2 + k.b_tf * s2);
  d.dpt_dth = vm * vn * (-k.g_tf * s2 + k.b_tf * c2);
  d.dqt_dvm = -2.0 * k.b_tt * vm + vn * (k.g_tf * s2 - k.b_tf * c2);
  d.dqt_dvn = vm * (k.g_tf * s2 - k.b_tf * c2);
  d.dqt_dth = vm * vn * (k.g_tf * c2 + k.b_tf * s2);
  return d;
}

inline std::vector<BranchFlow> evaluate_branch_flows(
    const Network& net, const std::vector<double>& v,
    const std::vector<double>& theta) {
  std::vector<BranchFlow> flows(net.branches.size());
  for (size_t l = 0; l < net.branches.size(); ++l) {
    const Branch& br = net.branches[l];
    const auto n = static_cast<size_t>(br.from_bus);
    const auto m = static_cast<size_t>(br.to_bus);
    flows[l] = branch_flow(br.k, v[n], v[m], theta[n] - theta[m]);
  }
  return flows;
}

/// Net active/reactive power flowing out of each bus into shunts and
/// branches; at a solved operating point these equal generation minus demand.
inline void bus_injections(const Network& net, const std::vector<double>& v,
                           const std::vector<double>& theta,
                           std::vector<double>& p_out, std::vector<double>& q_out) {
  const size_t nb = net.buses.size();
  p_out.assign(nb, 0.0);
  q_out.assign(nb, 0.0);
  for (size_t n = 0; n < nb; ++n) {
    p_out[n] = v[n] * v[n] * net.buses[n].g_shunt;
    q_out[n] = -v[n] * v[n] * net.buses[n].b_shunt;
  }
  for (const auto& br : net.branches) {
    const auto n = static_cast<size_t>(br.from_bus);
    const auto m = static_cast<size_t>(br.to_bus);
    const BranchFlow f = branch_flow(br.k, v[n], v[m],
                                     theta[n] - theta[m]);
    p_out[n] += f.p_from;
    q_out[n] += f.q_from;
    p_out[m] += f.p_to;
    q_out[m] += f.q_to;
  }
}

struct PowerFlowOptions {
  double tolerance = 1e-8;  // max abs nodal mismatch
  int max_iterations = 30;
};

struct PowerFlowResult {
  bool converged = false;
  int iterations = 0;
  double max_mismatch = kInf;
  std::vector<double> v;      // all buses
  std::vector<double> theta;  // all buses, slack pinned to 0
  double p_slack = 0.0;       // active power of the designated slack unit
  std::vector<double> q_gen_bus;  // reactive generation per entry of gen_bus_list
};

/// Newton-Raphson balance solve. Fixed data: demands, active power of every
/// non-slack generator, voltage magnitude at every generator bus. Unknowns:
/// angles off-slack and magnitudes at load buses. Flat start.
inline PowerFlowResult solve_power_flow(const Network& net,
                                        const std::vector<double>& p_demand,
                                        const std::vector<double>& q_demand,
                                        const std::vector<double>& p_gen,
                                        const std::vector<double>& v_gen_bus,
                                        const PowerFlowOptions& opt = {}) {
  const int nb = net.n_buses();
  const int slack = net.slack_bus;
  const int slack_unit = net.slack_gen();

  // unknown layout: theta for non-slack buses, then v for non-generator buses
  std::vector<int> th_idx(static_cast<size_t>(nb), -1);
  std::vector<int> v_idx(static_cast<size_t>(nb), -1);
  int nth = 0;
  for (int n = 0; n < nb; ++n)
    if (n != slack) th_idx[static_cast<size_t>(n)] = nth++;
  int nv = 0;
  for (int n = 0; n < nb; ++n)
    if (net.gen_bus_pos(n) < 0) v_idx[static_cast<size_t>(n)] = nv++;
  const int nx = nth + nv;

  // specified injections
  std::vector<double> p_spec(static_cast<size_t>(nb), 0.0);
  std::vector<double> q_spec(static_cast<size_t>(nb), 0.0);
  for (int n = 0; n < nb; ++n) {
    p_spec[static_cast<size_t>(n)] = -p_demand[static_cast<size_t>(n)];
    q_spec[static_cast<size_t>(n)] = -q_demand[static_cast<size_t>(n)];
  }
  for (int g = 0; g < net.n_gens(); ++g) {
    if (g == slack_unit) continue;  // supplied by the balance itself
    p_spec[static_cast<size_t>(net.generators[static_cast<size_t>(g)].bus)] +=
        p_gen[static_cast<size_t>(g)];
  }

  PowerFlowResult res;
  res.v.assign(static_cast<size_t>(nb), 1.0);
  res.theta.assign(static_cast<size_t>(nb), 0.0);
  for (int j = 0; j < net.n_gen_buses(); ++j)
    res.v[static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)])] =
        v_gen_bus[static_cast<size_t>(j)];

  std::vector<double> p_calc, q_calc;
  Eigen::MatrixXd J(nx, nx);
  Eigen::VectorXd rhs(nx);

  for (int it = 0; it <= opt.max_iterations; ++it) {
    bus_injections(net, res.v, res.theta, p_calc, q_calc);

    res.max_mismatch = 0.0;
    rhs.setZero();
    for (int n = 0; n < nb; ++n) {
      if (th_idx[static_cast<size_t>(n)] >= 0) {
        const double mis = p_calc[static_cast<size_t>(n)] - p_spec[static_cast<size_t>(n)];
        rhs(th_idx[static_cast<size_t>(n)]) = mis;
        res.max_mismatch = std::max(res.max_mismatch, std::abs(mis));
      }
      if (v_idx[static_cast<size_t>(n)] >= 0) {
        const double mis = q_calc[static_cast<size_t>(n)] - q_spec[static_cast<size_t>(n)];
        rhs(nth + v_idx[static_cast<size_t>(n)]) = mis;
        res.max_mismatch = std::max(res.max_mismatch, std::abs(mis));
      }
    }
    if (!std::isfinite(res.max_mismatch)) break;
    if (res.max_mismatch < opt.tolerance) {
      res.converged = true;
      res.iterations = it;
      break;
    }
    if (it == opt.max_iterations) break;

    J.setZero();
    for (int n = 0; n < nb; ++n) {
      const double vn = res.v[static_cast<size_t>(n)];
      if (v_idx[static_cast<size_t>(n)] >= 0) {
        const int cv = nth + v_idx[static_cast<size_t>(n)];
        if (th_idx[static_cast<size_t>(n)] >= 0)
          J(th_idx[static_cast<size_t>(n)], cv) += 2.0 * vn * net.buses[static_cast<size_t>(n)].g_shunt;
        J(nth + v_idx[static_cast<size_t>(n)], cv) += -2.0 * vn * net.buses[static_cast<size_t>(n)].b_shunt;
      }
    }
    for (const auto& br : net.branches) {
      const int n = br.from_bus, m = br.to_bus;
      const double vn = res.v[static_cast<size_t>(n)], vm = res.v[static_cast<size_t>(m)];
      const BranchPartials d = branch_partials(
          br.k, vn, vm, res.theta[static_cast<size_t>(n)] - res.theta[static_cast<size_t>(m)]);
      const int rpn = th_idx[static_cast<size_t>(n)];
      const int rpm = th_idx[static_cast<size_t>(m)];
      const int rqn = v_idx[static_cast<size_t>(n)] >= 0 ? nth + v_idx[static_cast<size_t>(n)] : -1;
      const int rqm = v_idx[static_cast<size_t>(m)] >= 0 ? nth + v_idx[static_cast<size_t>(m)] : -1;
      const int cthn = th_idx[static_cast<size_t>(n)];
      const int cthm = th_idx[static_cast<size_t>(m)];
      const int cvn = v_idx[static_cast<size_t>(n)] >= 0 ? nth + v_idx[static_cast<size_t>(n)] : -1;
      const int cvm = v_idx[static_cast<size_t>(m)] >= 0 ? nth + v_idx[static_cast<size_t>(m)] : -1;

      // from-side flows enter bus n's equations; theta_nm = theta_n - theta_m
      if (rpn >= 0) {
        if (cthn >= 0) J(rpn, cthn) += d.dpf_dth;
        if (cthm >= 0) J(rpn, cthm) -= d.dpf_dth;
        if (cvn >= 0) J(rpn, cvn) += d.dpf_dvn;
        if (cvm >= 0) J(rpn, cvm) += d.dpf_dvm;
      }
      if (rqn >= 0) {
        if (cthn >= 0) J(rqn, cthn) += d.dqf_dth;
        if (cthm >= 0) J(rqn, cthm) -= d.dqf_dth;
        if (cvn >= 0) J(rqn, cvn) += d.dqf_dvn;
        if (cvm >= 0) J(rqn, cvm) += d.dqf_dvm;
      }
      // to-side flows enter bus m's equations; theta_mn = theta_m - theta_n
      if (rpm >= 0) {
        if (cthm >= 0) J(rpm, cthm) += d.dpt_dth;
        if (cthn >= 0) J(rpm, cthn) -= d.dpt_dth;
        if (cvm >= 0) J(rpm, cvm) += d.dpt_dvm;
        if (cvn >= 0) J(rpm, cvn) += d.dpt_dvn;
      }
      if (rqm >= 0) {
        if (cthm >= 0) J(rqm, cthm) += d.dqt_dth;
        if (cthn >= 0) J(rqm, cthn) -= d.dqt_dth;
        if (cvm >= 0) J(rqm, cvm) += d.dqt_dvm;
        if (cvn >= 0) J(rqm, cvn) += d.dqt_dvn;
      }
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
    Eigen::VectorXd dx = lu.solve(rhs);
    if (!dx.allFinite()) break;
    for (int n = 0; n < nb; ++n) {
      if (th_idx[static_cast<size_t>(n)] >= 0)
        res.theta[static_cast<size_t>(n)] -= dx(th_idx[static_cast<size_t>(n)]);
      if (v_idx[static_cast<size_t>(n)] >= 0)
        res.v[static_cast<size_t>(n)] -= dx(nth + v_idx[static_cast<size_t>(n)]);
    }
    res.iterations = it + 1;
  }

  if (res.converged) {
    bus_injections(net, res.v, res.theta, p_calc, q_calc);
    res.q_gen_bus.assign(static_cast<size_t>(net.n_gen_buses()), 0.0);
    for (int j = 0; j < net.n_gen_buses(); ++j) {
      const auto n = static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)]);
      res.q_gen_bus[static_cast<size_t>(j)] = q_calc[n] + q_demand[n];
    }
    // whatever active power the network needs beyond the fixed units comes
    // from the designated slack unit
    double fixed_at_slack = 0.0;
    for (int g = 0; g < net.n_gens(); ++g)
      if (g != net.slack_gen() &&
          net.generators[static_cast<size_t>(g)].bus == slack)
        fixed_at_slack += p_gen[static_cast<size_t>(g)];
    res.p_slack = p_calc[static_cast<size_t>(slack)] +
                  p_demand[static_cast<size_t>(slack)] - fixed_at_slack;
  }
  return res;
}

/// Splits bus-level reactive generation among the units at that bus in
/// proportion to their q ranges (evenly when all ranges are degenerate).
inline std::vector<double> allocate_reactive(const Network& net,
                                             const std::vector<double>& q_gen_bus) {
  std::vector<double> q(static_cast<size_t>(net.n_gens()), 0.0);
  for (int j = 0; j < net.n_gen_buses(); ++j) {
    const int bus = net.gen_bus_list[static_cast<size_t>(j)];
    double total_width = 0.0;
    int count = 0;
    for (const auto& g : net.generators)
      if (g.bus == bus) {
        total_width += g.q_max - g.q_min;
        ++count;
      }
    for (int g = 0; g < net.n_gens(); ++g) {
      const auto& gen = net.generators[static_cast<size_t>(g)];
      if (gen.bus != bus) continue;
      const double share =
          total_width > 0.0 ? (gen.q_max - gen.q_min) / total_width : 1.0 / count;
      q[static_cast<size_t>(g)] = q_gen_bus[static_cast<size_t>(j)] * share;
    }
  }
  return q;
}

}  // namespace ktopf
