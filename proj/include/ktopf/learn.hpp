#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ktopf/acopf.hpp"
#include "ktopf/common.hpp"
#include "ktopf/netmodel.hpp"

namespace ktopf {

/// One demand scenario, optionally with its reference solution attached.
struct Record {
  std::vector<double> pd, qd;  // per bus
  std::vector<double> pg;      // per generator
  std::vector<double> vg;      // per gen_bus_list entry
  double objective = 0.0;
  double residual = kInf;
  bool labeled = false;
};

struct Dataset {
  std::vector<Record> records;

  int size() const { return static_cast<int>(records.size()); }
  int labeled_count() const {
    int c = 0;
    for (const auto& r : records) c += r.labeled ? 1 : 0;
    return c;
  }
};

struct GenerateOptions {
  int count = 1000;
  uint64_t seed = 0;
  double scale_min = 0.9;       // system-wide demand multiplier range
  double scale_max = 1.1;
  double per_node_noise = 0.05; // relative spread of the per-bus factor
  double q_jitter = 0.1;        // relative wobble of the power factor
};

/// Demand sampling: one shared multiplier per record, one mean-one lognormal
/// factor per bus, and an independently jittered reactive share. Buses with
/// zero nominal draw stay at zero. Fully determined by the seed.
inline Dataset generate_dataset(const Network& net, const GenerateOptions& opt) {
  Dataset ds;
  ds.records.resize(static_cast<size_t>(opt.count));
  Rng rng(opt.seed);
  const double sigma =
      std::sqrt(std::log(1.0 + opt.per_node_noise * opt.per_node_noise));
  const double mu = -0.5 * sigma * sigma;
  const size_t nb = net.buses.size();

  for (auto& rec : ds.records) {
    rec.pd.assign(nb, 0.0);
    rec.qd.assign(nb, 0.0);
    const double u = rng.uniform(opt.scale_min, opt.scale_max);
    for (size_t n = 0; n < nb; ++n) {
      const double p_nom = net.buses[n].p_demand;
      const double q_nom = net.buses[n].q_demand;
      if (p_nom != 0.0) {
        const double local = std::exp(mu + sigma * rng.normal());
        rec.pd[n] = p_nom * u * local;
        rec.qd[n] = rec.pd[n] * (q_nom / p_nom) *
                    (1.0 + opt.q_jitter * rng.uniform(-1.0, 1.0));
      } else if (q_nom != 0.0) {
        rec.qd[n] = q_nom * u * (1.0 + opt.q_jitter * rng.uniform(-1.0, 1.0));
      }
    }
  }
  return ds;
}

struct LabelOptions {
  int workers = 1;
  AcOpfOptions opf{};
  bool keep_unconverged = false;  // keep feasible iteration-limited solves
};

struct LabelStats {
  int attempted = 0;
  int labeled = 0;
  std::vector<int> dropped;
  std::vector<std::string> drop_reasons;
};

/// Solves every record's reference problem, in parallel when asked. Records
/// whose solve does not reach a clean feasible point stay unlabeled.
inline LabelStats label_dataset(const Network& net, Dataset& ds,
                                const LabelOptions& opt = {}) {
  LabelStats stats;
  stats.attempted = ds.size();
  const int workers = std::max(1, opt.workers);
  std::atomic<int> next{0};
  std::vector<std::string> fail(static_cast<size_t>(ds.size()));

  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= ds.size()) return;
      Record& rec = ds.records[static_cast<size_t>(i)];
      Dispatch d;
      const AcOpfReport rep = solve_acopf(net, rec.pd, rec.qd, d, opt.opf);
      const bool usable =
          rep.status == AcOpfStatus::Converged ||
          (opt.keep_unconverged && rep.status == AcOpfStatus::IterationLimit);
      if (!usable) {
        fail[static_cast<size_t>(i)] = to_string(rep.status);
        continue;
      }
      rec.pg = d.p_gen;
      rec.vg = d.v_gen_bus;
      rec.objective = d.cost;
      rec.residual = std::max(rep.pf_mismatch, rep.max_violation);
      rec.labeled = true;
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  for (int i = 0; i < ds.size(); ++i) {
    if (ds.records[static_cast<size_t>(i)].labeled) {
      ++stats.labeled;
    } else {
      stats.dropped.push_back(i);
      stats.drop_reasons.push_back(fail[static_cast<size_t>(i)]);
    }
  }
  return stats;
}

/// Mean of the k nearest labeled neighbours in plain Euclidean demand
/// distance; ties broken toward the earlier record.
inline Dispatch knn_predict(const Network& net, const Dataset& train, int k,
                            const std::vector<double>& pd,
                            const std::vector<double>& qd) {
  std::vector<std::pair<double, int>> order;
  order.reserve(train.records.size());
  for (int i = 0; i < train.size(); ++i) {
    const Record& rec = train.records[static_cast<size_t>(i)];
    if (!rec.labeled) continue;
    double d2 = 0.0;
    for (size_t n = 0; n < pd.size(); ++n) {
      const double ep = rec.pd[n] - pd[n];
      const double eq = rec.qd[n] - qd[n];
      d2 += ep * ep + eq * eq;
    }
    order.emplace_back(d2, i);
  }
  if (order.empty())
    throw std::runtime_error("knn: no labeled training records");
  const size_t kk = std::min<size_t>(static_cast<size_t>(std::max(1, k)),
                                     order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(kk),
                    order.end());

  Dispatch d;
  d.p_gen.assign(static_cast<size_t>(net.n_gens()), 0.0);
  d.v_gen_bus.assign(static_cast<size_t>(net.n_gen_buses()), 0.0);
  for (size_t j = 0; j < kk; ++j) {
    const Record& rec = train.records[static_cast<size_t>(order[j].second)];
    for (size_t g = 0; g < d.p_gen.size(); ++g) d.p_gen[g] += rec.pg[g];
    for (size_t n = 0; n < d.v_gen_bus.size(); ++n) d.v_gen_bus[n] += rec.vg[n];
  }
  for (auto& v : d.p_gen) v /= static_cast<double>(kk);
  for (auto& v : d.v_gen_bus) v /= static_cast<double>(kk);
  d.cost = dispatch_cost(net, d.p_gen);
  return d;
}

// --- dataset serialization ---

inline std::string dataset_header(const Network& net, bool labeled) {
  std::string h;
  for (int n = 0; n < net.n_buses(); ++n)
    h += (h.empty() ? "" : ",") + std::string("pd_") +
         std::to_string(net.bus_ids[static_cast<size_t>(n)]);
  for (int n = 0; n < net.n_buses(); ++n)
    h += ",qd_" + std::to_string(net.bus_ids[static_cast<size_t>(n)]);
  if (labeled) {
    for (int g = 0; g < net.n_gens(); ++g)
      h += ",pg_" + std::to_string(g + 1);
    for (int j = 0; j < net.n_gen_buses(); ++j)
      h += ",vg_" + std::to_string(
                        net.bus_ids[static_cast<size_t>(
                            net.gen_bus_list[static_cast<size_t>(j)])]);
    h += ",objective,residual";
  }
  return h;
}

/// Writes records to CSV with shortest round-trip number formatting, so a
/// write-read cycle reproduces values bit for bit. In labeled mode records
/// that never got a label are skipped.
inline void write_dataset_csv(const Network& net, const Dataset& ds,
                              const std::string& path, bool labeled) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << dataset_header(net, labeled) << "\n";
  for (const auto& rec : ds.records) {
    if (labeled && !rec.labeled) continue;
    std::string line;
    for (double v : rec.pd) line += (line.empty() ? "" : ",") + format_double(v);
    for (double v : rec.qd) line += "," + format_double(v);
    if (labeled) {
      for (double v : rec.pg) line += "," + format_double(v);
      for (double v : rec.vg) line += "," + format_double(v);
      line += "," + format_double(rec.objective);
      line += "," + format_double(rec.residual);
    }
    out << line << "\n";
  }
}

inline Dataset read_dataset_csv(const Network& net, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error(path + ": empty dataset file");
  const bool labeled = header == dataset_header(net, true);
  if (!labeled && header != dataset_header(net, false))
    throw std::runtime_error(path + ": header does not match the network" +
                             " (expected '" + dataset_header(net, false) +
                             "' or its labeled form)");

  Dataset ds;
  const size_t nb = net.buses.size();
  const size_t ng = static_cast<size_t>(net.n_gens());
  const size_t ngb = static_cast<size_t>(net.n_gen_buses());
  const size_t want = 2 * nb + (labeled ? ng + ngb + 2 : 0);
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != want)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(want) + " columns, got " +
                               std::to_string(cells.size()));
    Record rec;
    size_t c = 0;
    auto take = [&]() { return parse_double(std::string(cells[c++])); };
    rec.pd.resize(nb);
    rec.qd.resize(nb);
    for (size_t n = 0; n < nb; ++n) rec.pd[n] = take();
    for (size_t n = 0; n < nb; ++n) rec.qd[n] = take();
    if (labeled) {
      rec.pg.resize(ng);
      rec.vg.resize(ngb);
      for (size_t g = 0; g < ng; ++g) rec.pg[g] = take();
      for (size_t j = 0; j < ngb; ++j) rec.vg[j] = take();
      rec.objective = take();
      rec.residual = take();
      rec.labeled = true;
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace ktopf
