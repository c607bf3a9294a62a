#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ktopf/convexsolve.hpp"
#include "ktopf/netmodel.hpp"
#include "ktopf/powerflow.hpp"
#include "ktopf/taylor.hpp"

namespace ktopf {

/// A control decision plus, when known, the full network state it induces.
struct Dispatch {
  std::vector<double> p_gen;      // per generator
  std::vector<double> q_gen;      // per generator; empty if unknown
  std::vector<double> v_gen_bus;  // per gen_bus_list entry
  std::vector<double> v_bus;      // all buses; empty if unknown
  std::vector<double> theta_bus;  // all buses; empty if unknown
  double cost = 0.0;
};

inline double dispatch_cost(const Network& net, const std::vector<double>& p_gen) {
  double c = 0.0;
  for (int g = 0; g < net.n_gens(); ++g)
    c += net.generators[static_cast<size_t>(g)].cost(p_gen[static_cast<size_t>(g)]);
  return c;
}

struct ViolationReport {
  double max_violation = 0.0;  // largest single constraint violation, pu
  double total = 0.0;          // sum of positive violations
};

/// Constraint slack audit of a full state: generator boxes, voltage bands
/// and apparent-power ratings at both branch ends.
inline ViolationReport evaluate_violations(const Network& net,
                                           const std::vector<double>& p_gen,
                                           const std::vector<double>& q_gen,
                                           const std::vector<double>& v,
                                           const std::vector<double>& theta) {
  ViolationReport r;
  auto track = [&r](double excess) {
    if (excess > 0.0) {
      r.max_violation = std::max(r.max_violation, excess);
      r.total += excess;
    }
  };
  for (int g = 0; g < net.n_gens(); ++g) {
    const auto& gen = net.generators[static_cast<size_t>(g)];
    track(p_gen[static_cast<size_t>(g)] - gen.p_max);
    track(gen.p_min - p_gen[static_cast<size_t>(g)]);
    if (!q_gen.empty()) {
      track(q_gen[static_cast<size_t>(g)] - gen.q_max);
      track(gen.q_min - q_gen[static_cast<size_t>(g)]);
    }
  }
  for (int n = 0; n < net.n_buses(); ++n) {
    const Bus& b = net.buses[static_cast<size_t>(n)];
    track(v[static_cast<size_t>(n)] - b.v_max);
    track(b.v_min - v[static_cast<size_t>(n)]);
  }
  for (const auto& br : net.branches) {
    if (!br.has_limit()) continue;
    const auto n = static_cast<size_t>(br.from_bus);
    const auto m = static_cast<size_t>(br.to_bus);
    const BranchFlow f = branch_flow(br.k, v[n], v[m], theta[n] - theta[m]);
    track(std::hypot(f.p_from, f.q_from) - br.s_max);
    track(std::hypot(f.p_to, f.q_to) - br.s_max);
  }
  return r;
}

struct AcOpfOptions {
  double tol_feasibility = 1e-6;  // constraint slack at the returned point
  double tol_step = 1e-7;         // state change proposed by the subproblem
  int max_outer = 120;
  double trust_init = 0.1;
  double trust_min = 1e-8;
  double trust_max = 0.5;
  int segments = 12;
  PowerFlowOptions pf{};
  QpOptions qp{};
};

enum class AcOpfStatus { Converged, IterationLimit, Infeasible, PowerFlowDiverged };

inline const char* to_string(AcOpfStatus s) {
  switch (s) {
    case AcOpfStatus::Converged: return "converged";
    case AcOpfStatus::IterationLimit: return "iteration_limit";
    case AcOpfStatus::Infeasible: return "infeasible";
    case AcOpfStatus::PowerFlowDiverged: return "pf_diverged";
  }
  return "?";
}

struct AcOpfReport {
  AcOpfStatus status = AcOpfStatus::PowerFlowDiverged;
  int outer_iterations = 0;
  double cost = kInf;
  double max_violation = kInf;
  double pf_mismatch = kInf;
  double step_norm = kInf;
};

namespace detail {

struct Iterate {
  bool ok = false;
  Dispatch d;
  double pf_mismatch = kInf;
  ViolationReport viol;
};

/// Balance restoration: run the full nonlinear solve for a candidate control
/// and assemble the resulting dispatch.
inline Iterate restore(const Network& net, const std::vector<double>& pd,
                       const std::vector<double>& qd,
                       const std::vector<double>& p_gen,
                       const std::vector<double>& v_gen_bus,
                       const PowerFlowOptions& pf_opt) {
  Iterate it;
  PowerFlowResult pf = solve_power_flow(net, pd, qd, p_gen, v_gen_bus, pf_opt);
  if (!pf.converged) return it;
  it.ok = true;
  it.pf_mismatch = pf.max_mismatch;
  it.d.p_gen = p_gen;
  const int su = net.slack_gen();
  it.d.p_gen[static_cast<size_t>(su)] = pf.p_slack;
  it.d.q_gen = allocate_reactive(net, pf.q_gen_bus);
  it.d.v_gen_bus = v_gen_bus;
  it.d.v_bus = pf.v;
  it.d.theta_bus = pf.theta;
  it.d.cost = dispatch_cost(net, it.d.p_gen);
  it.viol = evaluate_violations(net, it.d.p_gen, it.d.q_gen, pf.v, pf.theta);
  return it;
}

inline void add_trust_region(ConvexProgram& prog, const VariableLayout& L,
                             const OperatingPoint& at, double rho) {
  for (size_t n = 0; n < at.v.size(); ++n) {
    if (L.v[n] >= 0) prog.add_bounds(L.v[n], at.v[n] - rho, at.v[n] + rho);
    if (L.theta[n] >= 0)
      prog.add_bounds(L.theta[n], at.theta[n] - rho, at.theta[n] + rho);
  }
}

/// feasibility-first comparison of two iterates under an arbitrary scalar
/// objective (generation cost or distance)
inline bool improves(const ViolationReport& cand_v, double cand_obj,
                     const ViolationReport& cur_v, double cur_obj,
                     double tol_feas) {
  const bool cand_ok = cand_v.max_violation <= tol_feas;
  const bool cur_ok = cur_v.max_violation <= tol_feas;
  if (cand_ok && cur_ok) return cand_obj < cur_obj - 1e-12;
  if (cand_ok != cur_ok) return cand_ok;
  if (cand_v.total < cur_v.total - 1e-12) return true;
  return cand_v.total < cur_v.total * 1.001 && cand_obj < cur_obj - 1e-9;
}

inline std::vector<double> initial_gen_voltages(const Network& net) {
  std::vector<double> v(static_cast<size_t>(net.n_gen_buses()), 1.0);
  for (int j = 0; j < net.n_gen_buses(); ++j) {
    const int bus = net.gen_bus_list[static_cast<size_t>(j)];
    for (const auto& g : net.generators)
      if (g.bus == bus) {
        const Bus& b = net.buses[static_cast<size_t>(bus)];
        v[static_cast<size_t>(j)] = std::clamp(g.v_setpoint, b.v_min, b.v_max);
        break;
      }
  }
  return v;
}

}  // namespace detail

/// Reference solver: successive linearization with a trust region on the
/// voltage state. Every candidate is restored to exact balance before being
/// judged, so accepted iterates always satisfy the power-flow equations to
/// solver tolerance; the convex subproblem only proposes directions.
inline AcOpfReport solve_acopf(const Network& net, const std::vector<double>& pd,
                               const std::vector<double>& qd, Dispatch& out,
                               const AcOpfOptions& opt = {}) {
  AcOpfReport rep;
  const int ng = net.n_gens();
  const int su = net.slack_gen();

  // starting controls: lossless dispatch if available, case setpoint voltages
  std::vector<double> p0(static_cast<size_t>(ng));
  for (int g = 0; g < ng; ++g) {
    const auto& gen = net.generators[static_cast<size_t>(g)];
    p0[static_cast<size_t>(g)] = std::clamp(gen.p_initial, gen.p_min, gen.p_max);
  }
  {
    TaylorModel dc = build_dcopf(net, pd);
    QpResult r = solve_qp(dc.prog, opt.qp);
    if (r.status == SolveStatus::Optimal) {
      ModelSolution s = extract_solution(dc, r.x);
      p0 = s.p_gen;
    }
  }
  std::vector<double> v0 = detail::initial_gen_voltages(net);

  detail::Iterate cur = detail::restore(net, pd, qd, p0, v0, opt.pf);
  if (!cur.ok) {
    std::fill(v0.begin(), v0.end(), 1.0);
    cur = detail::restore(net, pd, qd, p0, v0, opt.pf);
  }
  if (!cur.ok) {
    rep.status = AcOpfStatus::PowerFlowDiverged;
    return rep;
  }

  bool step_converged = false;
  bool gave_up = false;

  auto run_slp = [&](double rho) {
    int qp_infeasible_streak = 0;
    while (rep.outer_iterations < opt.max_outer) {
      ++rep.outer_iterations;
      OperatingPoint at{cur.d.v_bus, cur.d.theta_bus};
      TaylorModel model = build_ktac(net, pd, qd, at, opt.segments);
      detail::add_trust_region(model.prog, model.layout, at, rho);
      QpResult qp = solve_qp(model.prog, opt.qp);
      const bool usable =
          qp.status == SolveStatus::Optimal || qp.primal_residual < 1e-6;
      if (!usable) {
        ++qp_infeasible_streak;
        // a feasible point of the true problem stays feasible in its own
        // linearization, so repeated subproblem infeasibility from a restored
        // anchor is evidence about the instance, not the trust region
        if (qp_infeasible_streak >= 3 &&
            cur.viol.max_violation > opt.tol_feasibility) {
          gave_up = true;
          return false;
        }
        rho = std::max(rho * 0.5, opt.trust_min);
        if (rho <= opt.trust_min) return false;
        continue;
      }
      qp_infeasible_streak = 0;

      ModelSolution sol = extract_solution(model, qp.x);
      double step = 0.0;
      for (size_t n = 0; n < sol.v.size(); ++n) {
        step = std::max(step, std::abs(sol.v[n] - at.v[n]));
        step = std::max(step, std::abs(sol.theta[n] - at.theta[n]));
      }
      rep.step_norm = step;
      if (step < opt.tol_step && cur.viol.max_violation <= opt.tol_feasibility)
        return true;

      std::vector<double> v_cand(static_cast<size_t>(net.n_gen_buses()));
      for (int j = 0; j < net.n_gen_buses(); ++j)
        v_cand[static_cast<size_t>(j)] =
            sol.v[static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)])];
      detail::Iterate cand =
          detail::restore(net, pd, qd, sol.p_gen, v_cand, opt.pf);
      if (cand.ok && detail::improves(cand.viol, cand.d.cost, cur.viol,
                                      cur.d.cost, opt.tol_feasibility)) {
        cur = cand;
        rho = std::min(rho * 1.5, opt.trust_max);
      } else {
        rho *= 0.5;
        if (rho < opt.trust_min) return false;
      }
    }
    return false;
  };

  // nudge each non-slack unit and keep balanced feasible points that beat
  // the incumbent by more than restoration noise
  auto probe = [&]() {
    bool any = false;
    for (int round = 0; round < 3; ++round) {
      bool moved = false;
      const double margin = 1e-7 * std::max(1.0, std::abs(cur.d.cost));
      for (int g = 0; g < ng; ++g) {
        if (g == su) continue;
        const auto& gen = net.generators[static_cast<size_t>(g)];
        for (double delta : {1e-3, -1e-3}) {
          std::vector<double> p = cur.d.p_gen;
          const double np = std::clamp(p[static_cast<size_t>(g)] + delta,
                                       gen.p_min, gen.p_max);
          if (np == p[static_cast<size_t>(g)]) continue;
          p[static_cast<size_t>(g)] = np;
          detail::Iterate cand =
              detail::restore(net, pd, qd, p, cur.d.v_gen_bus, opt.pf);
          if (cand.ok && cand.viol.max_violation <= opt.tol_feasibility &&
              cand.d.cost < cur.d.cost - margin) {
            cur = cand;
            moved = true;
          }
        }
      }
      if (!moved) break;
      any = true;
    }
    return any;
  };

  // a probe move means the subproblem missed a descent direction; relaunch
  // the main loop from the better point
  for (int cycle = 0; cycle < 3 && !gave_up; ++cycle) {
    step_converged = run_slp(cycle == 0 ? opt.trust_init : 1e-2);
    if (!probe()) break;
    step_converged = false;
  }

  if (gave_up) {
    rep.status = AcOpfStatus::Infeasible;
    rep.cost = cur.d.cost;
    rep.max_violation = cur.viol.max_violation;
    rep.pf_mismatch = cur.pf_mismatch;
    out = cur.d;
    return rep;
  }

  out = cur.d;
  rep.cost = cur.d.cost;
  rep.max_violation = cur.viol.max_violation;
  rep.pf_mismatch = cur.pf_mismatch;
  if (cur.viol.max_violation > opt.tol_feasibility)
    rep.status = AcOpfStatus::Infeasible;
  else
    rep.status = step_converged ? AcOpfStatus::Converged
                                : AcOpfStatus::IterationLimit;
  return rep;
}

struct ProjectionResult {
  bool success = false;
  Dispatch projected;
  double delta_p_sum = 0.0, delta_v_sum = 0.0;    // L1 distances
  double delta_p_mean = 0.0, delta_v_mean = 0.0;  // mean absolute adjustment
  double projected_cost = 0.0;
  double max_violation = kInf;
};

/// Minimal-adjustment restoration of a control decision: finds a balanced,
/// constraint-satisfying point closest to (p_gen, v_gen_bus) in total
/// absolute adjustment of the controls.
inline ProjectionResult project_feasible(const Network& net,
                                         const std::vector<double>& pd,
                                         const std::vector<double>& qd,
                                         const Dispatch& target,
                                         const AcOpfOptions& opt = {}) {
  ProjectionResult res;
  const int ng = net.n_gens();
  const int ngb = net.n_gen_buses();

  auto distance = [&](const Dispatch& d, double& dp, double& dv) {
    dp = dv = 0.0;
    for (int g = 0; g < ng; ++g)
      dp += std::abs(d.p_gen[static_cast<size_t>(g)] -
                     target.p_gen[static_cast<size_t>(g)]);
    for (int j = 0; j < ngb; ++j)
      dv += std::abs(d.v_gen_bus[static_cast<size_t>(j)] -
                     target.v_gen_bus[static_cast<size_t>(j)]);
  };

  // start from the balanced version of the target itself; clamp controls
  // into their boxes first so restoration has a chance
  std::vector<double> p0 = target.p_gen;
  for (int g = 0; g < ng; ++g) {
    const auto& gen = net.generators[static_cast<size_t>(g)];
    p0[static_cast<size_t>(g)] = std::clamp(p0[static_cast<size_t>(g)], gen.p_min, gen.p_max);
  }
  std::vector<double> v0 = target.v_gen_bus;
  for (int j = 0; j < ngb; ++j) {
    const Bus& b = net.buses[static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)])];
    v0[static_cast<size_t>(j)] = std::clamp(v0[static_cast<size_t>(j)], b.v_min, b.v_max);
  }
  detail::Iterate cur = detail::restore(net, pd, qd, p0, v0, opt.pf);
  if (!cur.ok)
    cur = detail::restore(net, pd, qd, p0, detail::initial_gen_voltages(net), opt.pf);
  if (!cur.ok) return res;  // projection has no anchor to work from

  double dp, dv;
  distance(cur.d, dp, dv);
  double cur_obj = dp + dv;
  double rho = opt.trust_init;

  for (int it = 0; it < opt.max_outer; ++it) {
    OperatingPoint at{cur.d.v_bus, cur.d.theta_bus};
    TaylorModel model = build_ktac(net, pd, qd, at, opt.segments,
                                   /*extra_vars=*/ng + ngb);
    ConvexProgram& P = model.prog;
    const VariableLayout& L = model.layout;
    const int t0 = L.count;       // |p - target| epigraphs
    const int u0 = L.count + ng;  // |v - target| epigraphs
    for (int g = 0; g < ng; ++g) {
      P.add_linear_cost(t0 + g, 1.0);
      const double tp = target.p_gen[static_cast<size_t>(g)];
      int r = P.add_inequality(tp);  // p - t <= target
      P.add_ineq_term(r, L.pg[static_cast<size_t>(g)], 1.0);
      P.add_ineq_term(r, t0 + g, -1.0);
      r = P.add_inequality(-tp);  // -p - t <= -target
      P.add_ineq_term(r, L.pg[static_cast<size_t>(g)], -1.0);
      P.add_ineq_term(r, t0 + g, -1.0);
    }
    for (int j = 0; j < ngb; ++j) {
      P.add_linear_cost(u0 + j, 1.0);
      const int vvar = L.v[static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)])];
      const double tv = target.v_gen_bus[static_cast<size_t>(j)];
      int r = P.add_inequality(tv);
      P.add_ineq_term(r, vvar, 1.0);
      P.add_ineq_term(r, u0 + j, -1.0);
      r = P.add_inequality(-tv);
      P.add_ineq_term(r, vvar, -1.0);
      P.add_ineq_term(r, u0 + j, -1.0);
    }
    detail::add_trust_region(P, L, at, rho);

    QpResult qp = solve_qp(P, opt.qp);
    const bool usable =
        qp.status == SolveStatus::Optimal || qp.primal_residual < 1e-6;
    if (!usable) {
      rho *= 0.5;
      if (rho < opt.trust_min) break;
      continue;
    }
    ModelSolution sol = extract_solution(model, qp.x);
    double step = 0.0;
    for (size_t n = 0; n < sol.v.size(); ++n) {
      step = std::max(step, std::abs(sol.v[n] - at.v[n]));
      step = std::max(step, std::abs(sol.theta[n] - at.theta[n]));
    }
    if (step < opt.tol_step && cur.viol.max_violation <= opt.tol_feasibility)
      break;

    std::vector<double> v_cand(static_cast<size_t>(ngb));
    for (int j = 0; j < ngb; ++j)
      v_cand[static_cast<size_t>(j)] =
          sol.v[static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)])];
    detail::Iterate cand = detail::restore(net, pd, qd, sol.p_gen, v_cand, opt.pf);
    if (cand.ok) {
      double cdp, cdv;
      distance(cand.d, cdp, cdv);
      if (detail::improves(cand.viol, cdp + cdv, cur.viol, cur_obj,
                           opt.tol_feasibility)) {
        cur = cand;
        cur_obj = cdp + cdv;
        rho = std::min(rho * 1.5, opt.trust_max);
        continue;
      }
    }
    rho *= 0.5;
    if (rho < opt.trust_min) break;
  }

  distance(cur.d, res.delta_p_sum, res.delta_v_sum);
  res.delta_p_mean = ng ? res.delta_p_sum / ng : 0.0;
  res.delta_v_mean = ngb ? res.delta_v_sum / ngb : 0.0;
  res.projected = cur.d;
  res.projected_cost = cur.d.cost;
  res.max_violation = cur.viol.max_violation;
  res.success = cur.viol.max_violation <= opt.tol_feasibility;
  return res;
}

}  // namespace ktopf
