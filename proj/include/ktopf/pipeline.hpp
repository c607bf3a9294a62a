#pragma once

#include <stdexcept>
#include <string>

#include "ktopf/acopf.hpp"
#include "ktopf/learn.hpp"
#include "ktopf/taylor.hpp"

namespace ktopf {

enum class Method { Knn, Dc, KtDc, KtAc };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Knn: return "knn";
    case Method::Dc: return "dc";
    case Method::KtDc: return "kt-dc";
    case Method::KtAc: return "kt-ac";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "knn") return Method::Knn;
  if (s == "dc") return Method::Dc;
  if (s == "kt-dc") return Method::KtDc;
  if (s == "kt-ac") return Method::KtAc;
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct PipelineOptions {
  int k = 100;
  int segments = 12;
  PowerFlowOptions pf{};
  QpOptions qp{};
};

enum class FallbackReason { None, ModelInfeasible, SolverIterLimit, PowerFlowDiverged };

inline const char* to_string(FallbackReason r) {
  switch (r) {
    case FallbackReason::None: return "none";
    case FallbackReason::ModelInfeasible: return "model_infeasible";
    case FallbackReason::SolverIterLimit: return "solver_iter_limit";
    case FallbackReason::PowerFlowDiverged: return "pf_diverged";
  }
  return "?";
}

struct PipelineResult {
  Dispatch dispatch;
  bool fallback_used = false;
  FallbackReason reason = FallbackReason::None;
};

/// The full inference chain for one demand: nearest-neighbour estimate,
/// balance solve to anchor the linearization, then the chosen convex model.
/// Whenever a later stage cannot deliver, the neighbour estimate itself is
/// the answer and the result says so.
inline PipelineResult kt_pipeline(const Network& net, const Dataset& train,
                                  Method method, const std::vector<double>& pd,
                                  const std::vector<double>& qd,
                                  const PipelineOptions& opt = {}) {
  PipelineResult res;
  Dispatch knn = knn_predict(net, train, opt.k, pd, qd);

  auto fallback = [&](FallbackReason why) {
    res.dispatch = knn;
    res.fallback_used = true;
    res.reason = why;
    return res;
  };
  auto reason_for = [](SolveStatus s) {
    return s == SolveStatus::Infeasible ? FallbackReason::ModelInfeasible
                                        : FallbackReason::SolverIterLimit;
  };

  switch (method) {
    case Method::Knn:
      res.dispatch = knn;
      return res;

    case Method::Dc: {
      TaylorModel model = build_dcopf(net, pd);
      const QpResult qp = solve_qp(model.prog, opt.qp);
      if (qp.status != SolveStatus::Optimal) return fallback(reason_for(qp.status));
      const ModelSolution sol = extract_solution(model, qp.x);
      res.dispatch.p_gen = sol.p_gen;
      res.dispatch.v_gen_bus.assign(static_cast<size_t>(net.n_gen_buses()), 1.0);
      res.dispatch.v_bus = sol.v;  // all ones
      res.dispatch.theta_bus = sol.theta;
      res.dispatch.cost = dispatch_cost(net, sol.p_gen);
      return res;
    }

    case Method::KtDc:
    case Method::KtAc: {
      const PowerFlowResult pf =
          solve_power_flow(net, pd, qd, knn.p_gen, knn.v_gen_bus, opt.pf);
      if (!pf.converged) return fallback(FallbackReason::PowerFlowDiverged);
      const OperatingPoint at{pf.v, pf.theta};

      TaylorModel model = method == Method::KtAc
                              ? build_ktac(net, pd, qd, at, opt.segments)
                              : build_ktdc(net, pd, at);
      const QpResult qp = solve_qp(model.prog, opt.qp);
      if (qp.status != SolveStatus::Optimal) return fallback(reason_for(qp.status));
      const ModelSolution sol = extract_solution(model, qp.x);
      res.dispatch.p_gen = sol.p_gen;
      res.dispatch.theta_bus = sol.theta;
      if (method == Method::KtAc) {
        res.dispatch.q_gen = sol.q_gen;
        res.dispatch.v_bus = sol.v;
        res.dispatch.v_gen_bus.resize(static_cast<size_t>(net.n_gen_buses()));
        for (int j = 0; j < net.n_gen_buses(); ++j)
          res.dispatch.v_gen_bus[static_cast<size_t>(j)] =
              sol.v[static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)])];
      } else {
        // the active-only model carries no voltages; the neighbour estimate
        // remains the voltage decision
        res.dispatch.v_gen_bus = knn.v_gen_bus;
      }
      res.dispatch.cost = dispatch_cost(net, sol.p_gen);
      return res;
    }
  }
  return fallback(FallbackReason::ModelInfeasible);  // unreachable
}

}  // namespace ktopf
