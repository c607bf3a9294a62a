#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ktopf/acopf.hpp"
#include "ktopf/common.hpp"
#include "ktopf/pipeline.hpp"
#include "ktopf/powerflow.hpp"

namespace ktopf {

/// Normalized bound-violation score: average over the quantities of the
/// overshoot relative to the bound width, in percent. Zero-width entries
/// carry no information and are left out of the average.
inline double violation_score(const std::vector<double>& x,
                              const std::vector<double>& lo,
                              const std::vector<double>& hi) {
  double sum = 0.0;
  int counted = 0;
  for (size_t j = 0; j < x.size(); ++j) {
    const double width = hi[j] - lo[j];
    if (!(width > 0.0)) continue;
    const double excess = std::max({x[j] - hi[j], lo[j] - x[j], 0.0});
    sum += excess / width;
    ++counted;
  }
  return counted ? 100.0 * sum / counted : 0.0;
}

struct RecordEvaluation {
  Method method = Method::Knn;
  bool fallback_used = false;
  FallbackReason fallback_reason = FallbackReason::None;
  bool pf_fix_diverged = false;
  bool projection_failed = false;
  double mse_p = 0.0, mse_v = 0.0;
  double viol_p = 0.0, viol_q = 0.0, viol_s = 0.0, viol_v = 0.0;
  double delta_p = 0.0, delta_v = 0.0, delta_c = 0.0;
  double dispatch_cost = 0.0, projected_cost = 0.0, truth_cost = 0.0;
  Dispatch dispatch;
};

/// Scores one prediction against the reference label: squared dispatch
/// error, bound violations of the balanced completion of the prediction,
/// and the cost of repairing it to feasibility.
inline RecordEvaluation evaluate_record(const Network& net,
                                        const std::vector<double>& pd,
                                        const std::vector<double>& qd,
                                        const Record& truth,
                                        const PipelineResult& pred,
                                        const AcOpfOptions& opt = {}) {
  RecordEvaluation ev;
  ev.fallback_used = pred.fallback_used;
  ev.fallback_reason = pred.reason;
  ev.dispatch = pred.dispatch;
  ev.dispatch_cost = pred.dispatch.cost;
  ev.truth_cost = truth.objective;

  const Dispatch& d = pred.dispatch;
  for (size_t g = 0; g < d.p_gen.size(); ++g) {
    const double e = d.p_gen[g] - truth.pg[g];
    ev.mse_p += e * e;
  }
  for (size_t j = 0; j < d.v_gen_bus.size(); ++j) {
    const double e = d.v_gen_bus[j] - truth.vg[j];
    ev.mse_v += e * e;
  }

  // balanced completion: hold the predicted controls, let the network
  // decide everything else
  const PowerFlowResult pf =
      solve_power_flow(net, pd, qd, d.p_gen, d.v_gen_bus, opt.pf);
  if (!pf.converged) {
    ev.pf_fix_diverged = true;
    return ev;
  }
  std::vector<double> p = d.p_gen;
  p[static_cast<size_t>(net.slack_gen())] = pf.p_slack;
  const std::vector<double> q = allocate_reactive(net, pf.q_gen_bus);

  {
    const size_t ng = static_cast<size_t>(net.n_gens());
    std::vector<double> lo(ng), hi(ng), qlo(ng), qhi(ng);
    for (size_t g = 0; g < ng; ++g) {
      lo[g] = net.generators[g].p_min;
      hi[g] = net.generators[g].p_max;
      qlo[g] = net.generators[g].q_min;
      qhi[g] = net.generators[g].q_max;
    }
    ev.viol_p = violation_score(p, lo, hi);
    ev.viol_q = violation_score(q, qlo, qhi);
  }
  {
    const size_t nb = net.buses.size();
    std::vector<double> lo(nb), hi(nb);
    for (size_t n = 0; n < nb; ++n) {
      lo[n] = net.buses[n].v_min;
      hi[n] = net.buses[n].v_max;
    }
    ev.viol_v = violation_score(pf.v, lo, hi);
  }
  {
    std::vector<double> s, lo, hi;
    for (const auto& br : net.branches) {
      if (!br.has_limit()) continue;
      const BranchFlow f =
          branch_flow(br.k, pf.v[static_cast<size_t>(br.from_bus)],
                      pf.v[static_cast<size_t>(br.to_bus)],
                      pf.theta[static_cast<size_t>(br.from_bus)] -
                          pf.theta[static_cast<size_t>(br.to_bus)]);
      s.push_back(std::hypot(f.p_from, f.q_from));
      lo.push_back(0.0);
      hi.push_back(br.s_max);
      s.push_back(std::hypot(f.p_to, f.q_to));
      lo.push_back(0.0);
      hi.push_back(br.s_max);
    }
    ev.viol_s = violation_score(s, lo, hi);
  }

  const ProjectionResult proj = project_feasible(net, pd, qd, d, opt);
  if (!proj.success) {
    ev.projection_failed = true;
    return ev;
  }
  ev.delta_p = proj.delta_p_mean;
  ev.delta_v = proj.delta_v_mean;
  ev.projected_cost = proj.projected_cost;
  ev.delta_c = truth.objective != 0.0
                   ? 100.0 * (proj.projected_cost - truth.objective) / truth.objective
                   : 0.0;
  return ev;
}

struct MethodSummary {
  Method method = Method::Knn;
  double mse_p = 0, mse_v = 0;
  double viol_p = 0, viol_q = 0, viol_s = 0, viol_v = 0;
  double delta_p = 0, delta_v = 0, delta_c = 0;
  int evaluated = 0;          // records entering the means
  int excluded = 0;           // records no method mean may use
  int fallbacks = 0;          // over evaluated records
  int pf_fix_divergent = 0;   // tallied over all records
  int projection_failures = 0;
};

/// Means per method over the records where every method produced a scorable
/// result, so the columns stay comparable across methods. evaluations is
/// indexed [record][method].
inline std::vector<MethodSummary> aggregate_metrics(
    const std::vector<std::vector<RecordEvaluation>>& evaluations) {
  std::vector<MethodSummary> out;
  if (evaluations.empty()) return out;
  const size_t nm = evaluations[0].size();
  out.resize(nm);
  for (size_t m = 0; m < nm; ++m) out[m].method = evaluations[0][m].method;

  std::vector<char> excluded(evaluations.size(), 0);
  for (size_t r = 0; r < evaluations.size(); ++r)
    for (size_t m = 0; m < nm; ++m) {
      const auto& ev = evaluations[r][m];
      if (ev.pf_fix_diverged || ev.projection_failed) excluded[r] = 1;
      if (ev.pf_fix_diverged) ++out[m].pf_fix_divergent;
      if (ev.projection_failed) ++out[m].projection_failures;
    }

  for (size_t r = 0; r < evaluations.size(); ++r) {
    if (excluded[r]) {
      for (size_t m = 0; m < nm; ++m) ++out[m].excluded;
      continue;
    }
    for (size_t m = 0; m < nm; ++m) {
      const auto& ev = evaluations[r][m];
      MethodSummary& s = out[m];
      s.mse_p += ev.mse_p;
      s.mse_v += ev.mse_v;
      s.viol_p += ev.viol_p;
      s.viol_q += ev.viol_q;
      s.viol_s += ev.viol_s;
      s.viol_v += ev.viol_v;
      s.delta_p += ev.delta_p;
      s.delta_v += ev.delta_v;
      s.delta_c += ev.delta_c;
      if (ev.fallback_used) ++s.fallbacks;
      ++s.evaluated;
    }
  }
  for (auto& s : out) {
    if (!s.evaluated) continue;
    const double n = s.evaluated;
    s.mse_p /= n;
    s.mse_v /= n;
    s.viol_p /= n;
    s.viol_q /= n;
    s.viol_s /= n;
    s.viol_v /= n;
    s.delta_p /= n;
    s.delta_v /= n;
    s.delta_c /= n;
  }
  return out;
}

inline const char* summary_columns() {
  return "method\tmse_p\tmse_v\tviol_p\tviol_q\tviol_s\tviol_v\tdelta_p\tdelta_v\tdelta_c"
         "\tevaluated\tfallbacks\tpf_divergent\tprojection_failed";
}

inline std::string summary_to_tsv(const std::vector<MethodSummary>& rows) {
  std::string out = summary_columns();
  out += "\n";
  for (const auto& s : rows) {
    out += to_string(s.method);
    for (double v : {s.mse_p, s.mse_v, s.viol_p, s.viol_q, s.viol_s, s.viol_v,
                     s.delta_p, s.delta_v, s.delta_c})
      out += "\t" + format_double(v);
    out += "\t" + std::to_string(s.evaluated);
    out += "\t" + std::to_string(s.fallbacks);
    out += "\t" + std::to_string(s.pf_fix_divergent);
    out += "\t" + std::to_string(s.projection_failures);
    out += "\n";
  }
  return out;
}

inline std::vector<MethodSummary> parse_summary_tsv(const std::string& text) {
  std::vector<MethodSummary> rows;
  size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (trim(line).empty()) continue;
    if (first) {
      first = false;
      if (line != summary_columns())
        throw std::runtime_error("unrecognized summary header: '" + line + "'");
      continue;
    }
    const auto cells = split(line, '\t');
    if (cells.size() != 14)
      throw std::runtime_error("summary row has " + std::to_string(cells.size()) +
                               " columns, expected 14");
    MethodSummary s;
    s.method = method_from_string(std::string(cells[0]));
    size_t c = 1;
    for (double* f : {&s.mse_p, &s.mse_v, &s.viol_p, &s.viol_q, &s.viol_s,
                      &s.viol_v, &s.delta_p, &s.delta_v, &s.delta_c})
      *f = parse_double(std::string(cells[c++]));
    s.evaluated = std::stoi(std::string(cells[c++]));
    s.fallbacks = std::stoi(std::string(cells[c++]));
    s.pf_fix_divergent = std::stoi(std::string(cells[c++]));
    s.projection_failures = std::stoi(std::string(cells[c++]));
    rows.push_back(s);
  }
  return rows;
}

inline std::string summary_to_markdown(const std::vector<MethodSummary>& rows) {
  auto sci = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1e", v);
    return std::string(buf);
  };
  std::string out =
      "| method | MSE(p) | MSE(v) | VIOL(p) % | VIOL(q) % | VIOL(s) % | "
      "VIOL(v) % | dp | dv | dC % | fallbacks |\n"
      "|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& s : rows) {
    out += "| " + std::string(to_string(s.method));
    for (double v : {s.mse_p, s.mse_v, s.viol_p, s.viol_q, s.viol_s, s.viol_v,
                     s.delta_p, s.delta_v, s.delta_c})
      out += " | " + sci(v);
    out += " | " + std::to_string(s.fallbacks) + "/" + std::to_string(s.evaluated) + " |\n";
  }
  return out;
}

}  // namespace ktopf
