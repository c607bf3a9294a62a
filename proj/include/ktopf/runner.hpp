#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ktopf/matpower.hpp"
#include "ktopf/metrics.hpp"
#include "ktopf/pipeline.hpp"

namespace ktopf {

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return json::parse(in);
}

/// Whole-file replace via a sibling temp file, so readers never observe a
/// half-written document.
inline void write_file_atomic(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp + "'");
    out << body;
    out.flush();
    if (!out) throw std::runtime_error("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

struct RunConfig {
  std::string case_path;
  std::string train_path;
  std::string test_path;
  std::string out_dir;
  std::vector<Method> methods = {Method::Knn, Method::Dc, Method::KtDc,
                                 Method::KtAc};
  int k = 100;
  int segments = 12;
  int workers = 1;
  double tol_pf = 1e-8;
  double tol_qp = 1e-8;
};

struct RunOutcome {
  std::vector<MethodSummary> summary;
  int test_records = 0;
  int train_records = 0;
  double wall_seconds = 0.0;
  std::string summary_tsv, summary_md, manifest;  // paths written
};

namespace detail {

/// Datasets carry a manifest next to them naming the network they came
/// from; refuse to evaluate across a mismatch.
inline void check_sibling_manifest(const std::string& dataset_path,
                                   const std::string& fingerprint) {
  namespace fs = std::filesystem;
  const fs::path mf = fs::path(dataset_path).parent_path() / "manifest.json";
  if (!fs::exists(mf)) return;
  const json j = read_json_file(mf.string());
  if (!j.contains("case_fingerprint")) return;
  const std::string have = j["case_fingerprint"].get<std::string>();
  if (have != fingerprint)
    throw std::runtime_error(
        "dataset at '" + dataset_path + "' was built for network " + have +
        ", not " + fingerprint);
}

inline std::string instance_csv(const Network& net,
                                const std::vector<RecordEvaluation>& evs) {
  std::string out = "method,fallback,fallback_reason,mse_p,mse_v,viol_p,viol_q,"
                    "viol_s,viol_v,delta_p,delta_v,delta_c,cost,projected_cost";
  for (int g = 0; g < net.n_gens(); ++g) out += ",pg_" + std::to_string(g + 1);
  for (int j = 0; j < net.n_gen_buses(); ++j)
    out += ",vg_" + std::to_string(net.bus_ids[static_cast<size_t>(
               net.gen_bus_list[static_cast<size_t>(j)])]);
  out += "\n";
  for (const auto& ev : evs) {
    out += to_string(ev.method);
    out += ev.fallback_used ? ",1" : ",0";
    out += "," + std::string(to_string(ev.fallback_reason));
    for (double v : {ev.mse_p, ev.mse_v, ev.viol_p, ev.viol_q, ev.viol_s,
                     ev.viol_v, ev.delta_p, ev.delta_v, ev.delta_c,
                     ev.dispatch_cost, ev.projected_cost})
      out += "," + format_double(v);
    for (double v : ev.dispatch.p_gen) out += "," + format_double(v);
    for (double v : ev.dispatch.v_gen_bus) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

}  // namespace detail

/// Scores every configured method on every test record and lays the results
/// out under out_dir: one CSV per instance, machine and human summaries,
/// and a manifest tying everything to its inputs.
inline RunOutcome run_evaluation(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();

  const Network net = load_case(cfg.case_path);
  const std::string fingerprint = network_fingerprint(net);
  const Dataset train = read_dataset_csv(net, cfg.train_path);
  const Dataset test = read_dataset_csv(net, cfg.test_path);
  if (train.labeled_count() == 0)
    throw std::runtime_error("training dataset has no labels");
  if (test.labeled_count() != test.size())
    throw std::runtime_error("test dataset must be fully labeled");
  detail::check_sibling_manifest(cfg.train_path, fingerprint);
  detail::check_sibling_manifest(cfg.test_path, fingerprint);

  PipelineOptions popt;
  popt.k = cfg.k;
  popt.segments = cfg.segments;
  popt.pf.tolerance = cfg.tol_pf;
  popt.qp.tol_feasible = cfg.tol_qp;
  AcOpfOptions mopt;
  mopt.segments = cfg.segments;
  mopt.pf.tolerance = cfg.tol_pf;
  mopt.qp.tol_feasible = cfg.tol_qp;

  std::vector<std::vector<RecordEvaluation>> evals(
      static_cast<size_t>(test.size()));
  std::atomic<int> next{0};
  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= test.size()) return;
      const Record& rec = test.records[static_cast<size_t>(i)];
      auto& row = evals[static_cast<size_t>(i)];
      row.reserve(cfg.methods.size());
      for (Method m : cfg.methods) {
        const PipelineResult pr =
            kt_pipeline(net, train, m, rec.pd, rec.qd, popt);
        RecordEvaluation ev =
            evaluate_record(net, rec.pd, rec.qd, rec, pr, mopt);
        ev.method = m;
        row.push_back(std::move(ev));
      }
    }
  };
  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  RunOutcome out;
  out.summary = aggregate_metrics(evals);
  out.test_records = test.size();
  out.train_records = train.size();

  fs::create_directories(fs::path(cfg.out_dir) / "instances");
  for (int i = 0; i < test.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05d.csv", i);
    write_file_atomic((fs::path(cfg.out_dir) / "instances" / name).string(),
                      detail::instance_csv(net, evals[static_cast<size_t>(i)]));
  }
  out.summary_tsv = (fs::path(cfg.out_dir) / "summary.tsv").string();
  write_file_atomic(out.summary_tsv, summary_to_tsv(out.summary));
  out.summary_md = (fs::path(cfg.out_dir) / "summary.md").string();
  write_file_atomic(out.summary_md, summary_to_markdown(out.summary));

  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  json manifest;
  manifest["kind"] = "evaluation";
  manifest["case"] = cfg.case_path;
  manifest["case_fingerprint"] = fingerprint;
  manifest["train"] = {{"path", cfg.train_path}, {"records", train.size()}};
  manifest["test"] = {{"path", cfg.test_path}, {"records", test.size()}};
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  manifest["methods"] = methods;
  manifest["k"] = cfg.k;
  manifest["segments"] = cfg.segments;
  manifest["workers"] = cfg.workers;
  manifest["tol_pf"] = cfg.tol_pf;
  manifest["tol_qp"] = cfg.tol_qp;
  json tallies = json::object();
  for (const auto& s : out.summary) {
    tallies[to_string(s.method)] = {{"evaluated", s.evaluated},
                                    {"excluded", s.excluded},
                                    {"fallbacks", s.fallbacks},
                                    {"pf_divergent", s.pf_fix_divergent},
                                    {"projection_failed", s.projection_failures}};
  }
  manifest["tallies"] = tallies;
  manifest["wall_seconds"] = out.wall_seconds;
  out.manifest = (fs::path(cfg.out_dir) / "manifest.json").string();
  write_file_atomic(out.manifest, manifest.dump(2) + "\n");
  return out;
}

}  // namespace ktopf
