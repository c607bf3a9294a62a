#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "ktopf/convexsolve.hpp"
#include "ktopf/netmodel.hpp"
#include "ktopf/powerflow.hpp"

namespace ktopf {

/// Voltage profile a linearization is anchored at.
struct OperatingPoint {
  std::vector<double> v;
  std::vector<double> theta;
};

inline OperatingPoint flat_point(const Network& net) {
  OperatingPoint op;
  op.v.assign(static_cast<size_t>(net.n_buses()), 1.0);
  op.theta.assign(static_cast<size_t>(net.n_buses()), 0.0);
  return op;
}

/// Where each physical quantity lives inside a program's variable vector;
/// -1 marks quantities the model does not carry as variables.
struct VariableLayout {
  std::vector<int> pg, qg;          // per generator
  std::vector<int> v, theta;        // per bus
  std::vector<int> pf, qf, pt, qt;  // per branch
  int count = 0;

  static std::vector<int> none(int size) {
    return std::vector<int>(static_cast<size_t>(size), -1);
  }

  /// True when the assigned indices are exactly a permutation of 0..count-1.
  bool complete() const {
    std::vector<char> seen(static_cast<size_t>(count), 0);
    int assigned = 0;
    for (const auto* grp : {&pg, &qg, &v, &theta, &pf, &qf, &pt, &qt})
      for (int idx : *grp) {
        if (idx < 0) continue;
        if (idx >= count || seen[static_cast<size_t>(idx)]) return false;
        seen[static_cast<size_t>(idx)] = 1;
        ++assigned;
      }
    return assigned == count;
  }
};

/// One branch flow as an affine expression c0 + sum coef_i * x_i over the
/// state variables (v, theta); this is the tangent plane a flow-definition
/// row pins its flow variable to.
struct LinearFlow {
  double c0 = 0.0;
  int nterms = 0;
  std::array<int, 4> vars{};
  std::array<double, 4> coefs{};

  void add(int var, double coef) {
    if (coef == 0.0 || var < 0) return;
    vars[static_cast<size_t>(nterms)] = var;
    coefs[static_cast<size_t>(nterms)] = coef;
    ++nterms;
  }
  double value(const Eigen::VectorXd& x) const {
    double f = c0;
    for (int t = 0; t < nterms; ++t) f += coefs[static_cast<size_t>(t)] * x(vars[static_cast<size_t>(t)]);
    return f;
  }
};

enum class ModelKind { Dc, KtDc, KtAc };

struct BranchFlowExprs {
  LinearFlow pf, qf, pt, qt;
};

struct TaylorModel {
  ModelKind kind = ModelKind::Dc;
  ConvexProgram prog{0};
  VariableLayout layout;
  OperatingPoint anchor;
  std::vector<BranchFlowExprs> flows;  // tangent planes, per branch
};

namespace detail {

inline void add_generation_cost(const Network& net, ConvexProgram& prog,
                                const std::vector<int>& pg) {
  for (int g = 0; g < net.n_gens(); ++g) {
    const auto& gen = net.generators[static_cast<size_t>(g)];
    prog.add_quadratic_cost(pg[static_cast<size_t>(g)], gen.cost_quadratic);
    prog.add_linear_cost(pg[static_cast<size_t>(g)], gen.cost_linear);
  }
}

inline void add_generator_boxes(const Network& net, ConvexProgram& prog,
                                const VariableLayout& L, bool with_q) {
  for (int g = 0; g < net.n_gens(); ++g) {
    const auto& gen = net.generators[static_cast<size_t>(g)];
    prog.add_bounds(L.pg[static_cast<size_t>(g)], gen.p_min, gen.p_max);
    if (with_q) prog.add_bounds(L.qg[static_cast<size_t>(g)], gen.q_min, gen.q_max);
  }
}

inline void name_group(ConvexProgram& prog, const std::vector<int>& idx,
                       const char* stem) {
  for (size_t i = 0; i < idx.size(); ++i)
    if (idx[i] >= 0) prog.set_name(idx[i], stem + std::to_string(i));
}

/// row  flow_var = tangent(v, theta)
inline void add_flow_definition(ConvexProgram& prog, int flow_var,
                                const LinearFlow& f) {
  const int r = prog.add_equality(f.c0);
  prog.add_eq_term(r, flow_var, 1.0);
  for (int t = 0; t < f.nterms; ++t)
    prog.add_eq_term(r, f.vars[static_cast<size_t>(t)],
                     -f.coefs[static_cast<size_t>(t)]);
}

}  // namespace detail

/// Lossless network-flow relaxation: active power only, unit voltages,
/// flows proportional to angle differences over the series reactance.
inline TaylorModel build_dcopf(const Network& net,
                               const std::vector<double>& p_demand,
                               int extra_vars = 0) {
  const int ng = net.n_gens(), nl = net.n_branches(), nb = net.n_buses();
  TaylorModel m;
  m.kind = ModelKind::Dc;
  m.anchor = flat_point(net);
  VariableLayout& L = m.layout;
  L.qg = VariableLayout::none(ng);
  L.v = VariableLayout::none(nb);
  L.qf = VariableLayout::none(nl);
  L.pt = VariableLayout::none(nl);
  L.qt = VariableLayout::none(nl);
  for (int g = 0; g < ng; ++g) L.pg.push_back(L.count++);
  for (int l = 0; l < nl; ++l) L.pf.push_back(L.count++);
  for (int n = 0; n < nb; ++n) L.theta.push_back(L.count++);

  m.prog = ConvexProgram(L.count + extra_vars);
  ConvexProgram& P = m.prog;
  detail::name_group(P, L.pg, "pg");
  detail::name_group(P, L.pf, "pf");
  detail::name_group(P, L.theta, "th");
  detail::add_generation_cost(net, P, L.pg);

  m.flows.resize(static_cast<size_t>(nl));
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[static_cast<size_t>(l)];
    BranchFlowExprs& fx = m.flows[static_cast<size_t>(l)];
    fx.pf.add(L.theta[static_cast<size_t>(br.from_bus)], 1.0 / br.x);
    fx.pf.add(L.theta[static_cast<size_t>(br.to_bus)], -1.0 / br.x);
    fx.pt.add(L.theta[static_cast<size_t>(br.from_bus)], -1.0 / br.x);
    fx.pt.add(L.theta[static_cast<size_t>(br.to_bus)], 1.0 / br.x);
    detail::add_flow_definition(P, L.pf[static_cast<size_t>(l)], fx.pf);
  }

  std::vector<int> balance(static_cast<size_t>(nb));
  for (int n = 0; n < nb; ++n)
    balance[static_cast<size_t>(n)] = P.add_equality(p_demand[static_cast<size_t>(n)]);
  for (int g = 0; g < ng; ++g)
    P.add_eq_term(balance[static_cast<size_t>(net.generators[static_cast<size_t>(g)].bus)],
                  L.pg[static_cast<size_t>(g)], 1.0);
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[static_cast<size_t>(l)];
    const int fv = L.pf[static_cast<size_t>(l)];
    // single flow variable serves both ends: injection -pf at the sending
    // bus, +pf at the receiving one
    P.add_eq_term(balance[static_cast<size_t>(br.from_bus)], fv, -1.0);
    P.add_eq_term(balance[static_cast<size_t>(br.to_bus)], fv, 1.0);
    if (br.has_limit()) P.add_bounds(fv, -br.s_max, br.s_max);
  }

  const int ref = P.add_equality(0.0);
  P.add_eq_term(ref, L.theta[static_cast<size_t>(net.slack_bus)], 1.0);
  detail::add_generator_boxes(net, P, L, false);
  return m;
}

/// Active-power model with both branch ends linearized around an operating
/// point; losses and the fixed shunt draw survive the linearization.
inline TaylorModel build_ktdc(const Network& net,
                              const std::vector<double>& p_demand,
                              const OperatingPoint& at, int extra_vars = 0) {
  const int ng = net.n_gens(), nl = net.n_branches(), nb = net.n_buses();
  TaylorModel m;
  m.kind = ModelKind::KtDc;
  m.anchor = at;
  VariableLayout& L = m.layout;
  L.qg = VariableLayout::none(ng);
  L.v = VariableLayout::none(nb);
  L.qf = VariableLayout::none(nl);
  L.qt = VariableLayout::none(nl);
  for (int g = 0; g < ng; ++g) L.pg.push_back(L.count++);
  for (int l = 0; l < nl; ++l) L.pf.push_back(L.count++);
  for (int l = 0; l < nl; ++l) L.pt.push_back(L.count++);
  for (int n = 0; n < nb; ++n) L.theta.push_back(L.count++);

  m.prog = ConvexProgram(L.count + extra_vars);
  ConvexProgram& P = m.prog;
  detail::name_group(P, L.pg, "pg");
  detail::name_group(P, L.pf, "pf");
  detail::name_group(P, L.pt, "pt");
  detail::name_group(P, L.theta, "th");
  detail::add_generation_cost(net, P, L.pg);

  m.flows.resize(static_cast<size_t>(nl));
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[static_cast<size_t>(l)];
    const auto n = static_cast<size_t>(br.from_bus);
    const auto mm = static_cast<size_t>(br.to_bus);
    const double th_nm = at.theta[n] - at.theta[mm];
    const BranchFlow f0 = branch_flow(br.k, at.v[n], at.v[mm], th_nm);
    const BranchPartials d = branch_partials(br.k, at.v[n], at.v[mm], th_nm);
    BranchFlowExprs& fx = m.flows[static_cast<size_t>(l)];
    // pf = f0 + dpf_dth (theta_nm - anchor)
    fx.pf.c0 = f0.p_from - d.dpf_dth * th_nm;
    fx.pf.add(L.theta[n], d.dpf_dth);
    fx.pf.add(L.theta[mm], -d.dpf_dth);
    // pt = f0 + dpt_dth (theta_mn - anchor)
    fx.pt.c0 = f0.p_to - d.dpt_dth * (-th_nm);
    fx.pt.add(L.theta[mm], d.dpt_dth);
    fx.pt.add(L.theta[n], -d.dpt_dth);
    detail::add_flow_definition(P, L.pf[static_cast<size_t>(l)], fx.pf);
    detail::add_flow_definition(P, L.pt[static_cast<size_t>(l)], fx.pt);
  }

  std::vector<int> balance(static_cast<size_t>(nb));
  for (int n = 0; n < nb; ++n) {
    const double vn = at.v[static_cast<size_t>(n)];
    balance[static_cast<size_t>(n)] = P.add_equality(
        p_demand[static_cast<size_t>(n)] +
        vn * vn * net.buses[static_cast<size_t>(n)].g_shunt);
  }
  for (int g = 0; g < ng; ++g)
    P.add_eq_term(balance[static_cast<size_t>(net.generators[static_cast<size_t>(g)].bus)],
                  L.pg[static_cast<size_t>(g)], 1.0);
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[static_cast<size_t>(l)];
    P.add_eq_term(balance[static_cast<size_t>(br.from_bus)],
                  L.pf[static_cast<size_t>(l)], -1.0);
    P.add_eq_term(balance[static_cast<size_t>(br.to_bus)],
                  L.pt[static_cast<size_t>(l)], -1.0);
    if (br.has_limit()) {
      P.add_bounds(L.pf[static_cast<size_t>(l)], -br.s_max, br.s_max);
      P.add_bounds(L.pt[static_cast<size_t>(l)], -br.s_max, br.s_max);
    }
  }

  const int ref = P.add_equality(0.0);
  P.add_eq_term(ref, L.theta[static_cast<size_t>(net.slack_bus)], 1.0);
  detail::add_generator_boxes(net, P, L, false);
  return m;
}

/// Full first-order model: every branch flow and the voltage-dependent shunt
/// draw are replaced by their tangent planes at the operating point; the
/// apparent-power discs become inscribed polygons.
inline TaylorModel build_ktac(const Network& net,
                              const std::vector<double>& p_demand,
                              const std::vector<double>& q_demand,
                              const OperatingPoint& at, int segments = 12,
                              int extra_vars = 0) {
  if (segments < 3)
    throw std::invalid_argument("disc approximation needs >= 3 segments");
  const int ng = net.n_gens(), nl = net.n_branches(), nb = net.n_buses();
  TaylorModel m;
  m.kind = ModelKind::KtAc;
  m.anchor = at;
  VariableLayout& L = m.layout;
  for (int g = 0; g < ng; ++g) L.pg.push_back(L.count++);
  for (int g = 0; g < ng; ++g) L.qg.push_back(L.count++);
  for (int l = 0; l < nl; ++l) L.pf.push_back(L.count++);
  for (int l = 0; l < nl; ++l) L.qf.push_back(L.count++);
  for (int l = 0; l < nl; ++l) L.pt.push_back(L.count++);
  for (int l = 0; l < nl; ++l) L.qt.push_back(L.count++);
  for (int n = 0; n < nb; ++n) L.v.push_back(L.count++);
  for (int n = 0; n < nb; ++n) L.theta.push_back(L.count++);

  m.prog = ConvexProgram(L.count + extra_vars);
  ConvexProgram& P = m.prog;
  detail::name_group(P, L.pg, "pg");
  detail::name_group(P, L.qg, "qg");
  detail::name_group(P, L.pf, "pf");
  detail::name_group(P, L.qf, "qf");
  detail::name_group(P, L.pt, "pt");
  detail::name_group(P, L.qt, "qt");
  detail::name_group(P, L.v, "v");
  detail::name_group(P, L.theta, "th");
  detail::add_generation_cost(net, P, L.pg);

  m.flows.resize(static_cast<size_t>(nl));
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[static_cast<size_t>(l)];
    const auto n = static_cast<size_t>(br.from_bus);
    const auto mm = static_cast<size_t>(br.to_bus);
    const double vn = at.v[n], vm = at.v[mm];
    const double th_nm = at.theta[n] - at.theta[mm];
    const BranchFlow f0 = branch_flow(br.k, vn, vm, th_nm);
    const BranchPartials d = branch_partials(br.k, vn, vm, th_nm);
    BranchFlowExprs& fx = m.flows[static_cast<size_t>(l)];

    auto tangent = [&](LinearFlow& f, double f_at, double d_vn, double d_vm,
                       double d_th, bool from_side) {
      // d_th is taken w.r.t. theta_nm on the from side, theta_mn on the to
      // side; both expand to +/- theta_n, theta_m terms
      const double th_at = from_side ? th_nm : -th_nm;
      f.c0 = f_at - d_vn * vn - d_vm * vm - d_th * th_at;
      f.add(L.v[n], d_vn);
      f.add(L.v[mm], d_vm);
      if (from_side) {
        f.add(L.theta[n], d_th);
        f.add(L.theta[mm], -d_th);
      } else {
        f.add(L.theta[mm], d_th);
        f.add(L.theta[n], -d_th);
      }
    };
    tangent(fx.pf, f0.p_from, d.dpf_dvn, d.dpf_dvm, d.dpf_dth, true);
    tangent(fx.qf, f0.q_from, d.dqf_dvn, d.dqf_dvm, d.dqf_dth, true);
    tangent(fx.pt, f0.p_to, d.dpt_dvn, d.dpt_dvm, d.dpt_dth, false);
    tangent(fx.qt, f0.q_to, d.dqt_dvn, d.dqt_dvm, d.dqt_dth, false);
    detail::add_flow_definition(P, L.pf[static_cast<size_t>(l)], fx.pf);
    detail::add_flow_definition(P, L.qf[static_cast<size_t>(l)], fx.qf);
    detail::add_flow_definition(P, L.pt[static_cast<size_t>(l)], fx.pt);
    detail::add_flow_definition(P, L.qt[static_cast<size_t>(l)], fx.qt);
  }

  std::vector<int> p_balance(static_cast<size_t>(nb)), q_balance(static_cast<size_t>(nb));
  for (int n = 0; n < nb; ++n) {
    const Bus& bus = net.buses[static_cast<size_t>(n)];
    const double vn = at.v[static_cast<size_t>(n)];
    // v^2 g_sh ~ g_sh vn (2v - vn);  -v^2 b_sh ~ b_sh vn (vn - 2v)
    const int rp = P.add_equality(p_demand[static_cast<size_t>(n)] - bus.g_shunt * vn * vn);
    P.add_eq_term(rp, L.v[static_cast<size_t>(n)], -2.0 * bus.g_shunt * vn);
    const int rq = P.add_equality(q_demand[static_cast<size_t>(n)] + bus.b_shunt * vn * vn);
    P.add_eq_term(rq, L.v[static_cast<size_t>(n)], 2.0 * bus.b_shunt * vn);
    p_balance[static_cast<size_t>(n)] = rp;
    q_balance[static_cast<size_t>(n)] = rq;
  }
  for (int g = 0; g < ng; ++g) {
    const auto bus = static_cast<size_t>(net.generators[static_cast<size_t>(g)].bus);
    P.add_eq_term(p_balance[bus], L.pg[static_cast<size_t>(g)], 1.0);
    P.add_eq_term(q_balance[bus], L.qg[static_cast<size_t>(g)], 1.0);
  }
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[static_cast<size_t>(l)];
    const auto fb = static_cast<size_t>(br.from_bus);
    const auto tb = static_cast<size_t>(br.to_bus);
    P.add_eq_term(p_balance[fb], L.pf[static_cast<size_t>(l)], -1.0);
    P.add_eq_term(q_balance[fb], L.qf[static_cast<size_t>(l)], -1.0);
    P.add_eq_term(p_balance[tb], L.pt[static_cast<size_t>(l)], -1.0);
    P.add_eq_term(q_balance[tb], L.qt[static_cast<size_t>(l)], -1.0);

    if (br.has_limit()) {
      auto disc = [&](int pvar, int qvar) {
        for (const auto& cut : polygonize_circle(br.s_max, segments)) {
          const int r = P.add_inequality(cut.rhs);
          P.add_ineq_term(r, pvar, cut.coef_p);
          P.add_ineq_term(r, qvar, cut.coef_q);
        }
      };
      disc(L.pf[static_cast<size_t>(l)], L.qf[static_cast<size_t>(l)]);
      disc(L.pt[static_cast<size_t>(l)], L.qt[static_cast<size_t>(l)]);
    }
  }

  const int ref = P.add_equality(0.0);
  P.add_eq_term(ref, L.theta[static_cast<size_t>(net.slack_bus)], 1.0);
  detail::add_generator_boxes(net, P, L, true);
  for (int n = 0; n < nb; ++n)
    P.add_bounds(L.v[static_cast<size_t>(n)], net.buses[static_cast<size_t>(n)].v_min,
                 net.buses[static_cast<size_t>(n)].v_max);
  return m;
}

/// Per-quantity view of a solved model. Quantities the model lacks as
/// variables fall back to their implied values (unit voltage, zero reactive,
/// the tangent expression for a missing to-side flow).
struct ModelSolution {
  std::vector<double> p_gen, q_gen;
  std::vector<double> v, theta;
  std::vector<double> p_from, q_from, p_to, q_to;
};

inline ModelSolution extract_solution(const TaylorModel& m,
                                      const Eigen::VectorXd& x) {
  const VariableLayout& L = m.layout;
  auto pick = [&x](const std::vector<int>& idx, double fallback) {
    std::vector<double> out(idx.size(), fallback);
    for (size_t i = 0; i < idx.size(); ++i)
      if (idx[i] >= 0) out[i] = x(idx[i]);
    return out;
  };
  ModelSolution s;
  s.p_gen = pick(L.pg, 0.0);
  s.q_gen = pick(L.qg, 0.0);
  s.v = pick(L.v, 1.0);
  s.theta = pick(L.theta, 0.0);
  const size_t nl = m.flows.size();
  s.p_from.resize(nl);
  s.q_from.resize(nl);
  s.p_to.resize(nl);
  s.q_to.resize(nl);
  auto flow = [&](const std::vector<int>& idx, const LinearFlow& expr, size_t l) {
    return idx[l] >= 0 ? x(idx[l]) : expr.value(x);
  };
  for (size_t l = 0; l < nl; ++l) {
    s.p_from[l] = flow(L.pf, m.flows[l].pf, l);
    s.q_from[l] = flow(L.qf, m.flows[l].qf, l);
    s.p_to[l] = flow(L.pt, m.flows[l].pt, l);
    s.q_to[l] = flow(L.qt, m.flows[l].qt, l);
  }
  return s;
}

}  // namespace ktopf
