#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ktopf/acopf.hpp"
#include "ktopf/learn.hpp"
#include "ktopf/matpower.hpp"
#include "ktopf/metrics.hpp"
#include "ktopf/pipeline.hpp"
#include "ktopf/runner.hpp"

namespace {

using namespace ktopf;
namespace fs = std::filesystem;

/// Lets --config point at a JSON file. Nested objects become subcommand
/// sections, arrays become repeated values; command line flags still win.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json doc = json::parse(in);
    if (!doc.is_object())
      throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> out;
    walk(doc, {}, out);
    return out;
  }

 private:
  static std::string scalar(const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }

  static void walk(const json& node, std::vector<std::string> parents,
                   std::vector<CLI::ConfigItem>& out) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      if (it.value().is_object()) {
        auto deeper = parents;
        deeper.push_back(it.key());
        walk(it.value(), deeper, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it.value().is_array())
        for (const auto& e : it.value()) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(it.value()));
      out.push_back(std::move(item));
    }
  }
};

void nominal_demand(const Network& net, std::vector<double>& pd,
                    std::vector<double>& qd) {
  pd.resize(net.buses.size());
  qd.resize(net.buses.size());
  for (size_t n = 0; n < net.buses.size(); ++n) {
    pd[n] = net.buses[n].p_demand;
    qd[n] = net.buses[n].q_demand;
  }
}

void print_gen_table(const Network& net, const std::vector<double>& p,
                     const std::vector<double>& q,
                     const std::vector<double>& v_gen_bus) {
  std::printf("  gen  bus         p         q      v\n");
  for (int g = 0; g < net.n_gens(); ++g) {
    const auto& gen = net.generators[static_cast<size_t>(g)];
    const int pos = net.gen_bus_pos(gen.bus);
    const double vg =
        v_gen_bus.empty() ? 1.0 : v_gen_bus[static_cast<size_t>(pos)];
    std::printf("  %3d  %3d  %8.4f  %8.4f  %.4f\n", g + 1,
                net.bus_ids[static_cast<size_t>(gen.bus)],
                p[static_cast<size_t>(g)],
                q.empty() ? 0.0 : q[static_cast<size_t>(g)], vg);
  }
}

int cmd_case_validate(const std::string& case_path) {
  const Network net = load_case(case_path);
  std::printf("ok: %d buses, %d branches, %d generators (slack bus %d)\n",
              net.n_buses(), net.n_branches(), net.n_gens(),
              net.bus_ids[static_cast<size_t>(net.slack_bus)]);
  std::printf("fingerprint: %s\n", network_fingerprint(net).c_str());
  return 0;
}

int cmd_pf_run(const std::string& case_path, double tol_pf) {
  const Network net = load_case(case_path);
  std::vector<double> pd, qd;
  nominal_demand(net, pd, qd);
  std::vector<double> p0(static_cast<size_t>(net.n_gens()));
  for (int g = 0; g < net.n_gens(); ++g)
    p0[static_cast<size_t>(g)] = net.generators[static_cast<size_t>(g)].p_initial;
  PowerFlowOptions popt;
  popt.tolerance = tol_pf;
  const PowerFlowResult pf = solve_power_flow(
      net, pd, qd, p0, detail::initial_gen_voltages(net), popt);
  if (!pf.converged) {
    std::printf("diverged after %d iterations (mismatch %.3e)\n", pf.iterations,
                pf.max_mismatch);
    return 1;
  }
  std::printf("converged in %d iterations, max mismatch %.3e\n", pf.iterations,
              pf.max_mismatch);
  std::printf("  bus        v     theta\n");
  for (int n = 0; n < net.n_buses(); ++n)
    std::printf("  %3d  %.5f  %8.4f\n", net.bus_ids[static_cast<size_t>(n)],
                pf.v[static_cast<size_t>(n)],
                pf.theta[static_cast<size_t>(n)] * 180.0 / M_PI);
  std::vector<double> p = p0;
  p[static_cast<size_t>(net.slack_gen())] = pf.p_slack;
  print_gen_table(net, p, allocate_reactive(net, pf.q_gen_bus),
                  detail::initial_gen_voltages(net));
  return 0;
}

int cmd_opf_solve(const std::string& case_path, const std::string& method,
                  const std::string& train_path, int k, int segments,
                  double tol_pf, double tol_qp) {
  const Network net = load_case(case_path);
  std::vector<double> pd, qd;
  nominal_demand(net, pd, qd);

  AcOpfOptions aopt;
  aopt.segments = segments;
  aopt.pf.tolerance = tol_pf;
  aopt.qp.tol_feasible = tol_qp;

  if (method == "ac") {
    Dispatch d;
    const AcOpfReport rep = solve_acopf(net, pd, qd, d, aopt);
    std::printf("status: %s after %d iterations\n", to_string(rep.status),
                rep.outer_iterations);
    if (rep.status == AcOpfStatus::Converged ||
        rep.status == AcOpfStatus::IterationLimit) {
      std::printf("cost: %.6f  max violation: %.3e  mismatch: %.3e\n", rep.cost,
                  rep.max_violation, rep.pf_mismatch);
      print_gen_table(net, d.p_gen, d.q_gen, d.v_gen_bus);
    }
    return rep.status == AcOpfStatus::Converged ? 0 : 1;
  }

  if (method == "dc") {
    TaylorModel model = build_dcopf(net, pd);
    const QpResult qp = solve_qp(model.prog, aopt.qp);
    std::printf("status: %s after %d iterations\n", to_string(qp.status),
                qp.iterations);
    if (qp.status != SolveStatus::Optimal) return 1;
    const ModelSolution sol = extract_solution(model, qp.x);
    std::printf("cost: %.6f\n", dispatch_cost(net, sol.p_gen));
    print_gen_table(net, sol.p_gen, {}, {});
    return 0;
  }

  // the two linearized models; anchored on neighbours when a training set
  // is given, else on a balance solve of the case's own setpoints
  const Method m = method_from_string(method);
  if (!train_path.empty()) {
    const Dataset train = read_dataset_csv(net, train_path);
    PipelineOptions popt;
    popt.k = k;
    popt.segments = segments;
    popt.pf.tolerance = tol_pf;
    popt.qp.tol_feasible = tol_qp;
    const PipelineResult res = kt_pipeline(net, train, m, pd, qd, popt);
    if (res.fallback_used)
      std::printf("fell back to the neighbour estimate (%s)\n",
                  to_string(res.reason));
    std::printf("cost: %.6f\n", res.dispatch.cost);
    print_gen_table(net, res.dispatch.p_gen, res.dispatch.q_gen,
                    res.dispatch.v_gen_bus);
    return res.fallback_used ? 1 : 0;
  }

  std::vector<double> p0(static_cast<size_t>(net.n_gens()));
  for (int g = 0; g < net.n_gens(); ++g) {
    const auto& gen = net.generators[static_cast<size_t>(g)];
    p0[static_cast<size_t>(g)] = std::clamp(gen.p_initial, gen.p_min, gen.p_max);
  }
  const PowerFlowResult pf = solve_power_flow(
      net, pd, qd, p0, detail::initial_gen_voltages(net), aopt.pf);
  if (!pf.converged) {
    std::printf("anchoring balance solve diverged\n");
    return 1;
  }
  const OperatingPoint at{pf.v, pf.theta};
  TaylorModel model = m == Method::KtAc ? build_ktac(net, pd, qd, at, segments)
                                        : build_ktdc(net, pd, at);
  const QpResult qp = solve_qp(model.prog, aopt.qp);
  std::printf("status: %s after %d iterations\n", to_string(qp.status),
              qp.iterations);
  if (qp.status != SolveStatus::Optimal) return 1;
  const ModelSolution sol = extract_solution(model, qp.x);
  std::printf("cost: %.6f\n", dispatch_cost(net, sol.p_gen));
  print_gen_table(net, sol.p_gen, sol.q_gen,
                  m == Method::KtAc ? sol.v : std::vector<double>{});
  return 0;
}

int cmd_dataset_generate(const std::string& case_path, int train_n, int test_n,
                         uint64_t seed, const std::string& out_dir,
                         const GenerateOptions& shape) {
  const Network net = load_case(case_path);
  fs::create_directories(out_dir);

  GenerateOptions go = shape;
  go.seed = seed;
  go.count = train_n;
  const Dataset train = generate_dataset(net, go);
  go.seed = seed + 1;
  go.count = test_n;
  const Dataset test = generate_dataset(net, go);

  write_dataset_csv(net, train, (fs::path(out_dir) / "train.csv").string(), false);
  write_dataset_csv(net, test, (fs::path(out_dir) / "test.csv").string(), false);

  json manifest;
  manifest["kind"] = "dataset";
  manifest["case"] = case_path;
  manifest["case_fingerprint"] = network_fingerprint(net);
  manifest["seed"] = seed;
  manifest["labeled"] = false;
  manifest["options"] = {{"scale_min", shape.scale_min},
                         {"scale_max", shape.scale_max},
                         {"per_node_noise", shape.per_node_noise},
                         {"q_jitter", shape.q_jitter}};
  manifest["train"] = {{"file", "train.csv"}, {"records", train.size()}};
  manifest["test"] = {{"file", "test.csv"}, {"records", test.size()}};
  write_file_atomic((fs::path(out_dir) / "manifest.json").string(),
                    manifest.dump(2) + "\n");
  std::printf("wrote %d train and %d test records to %s\n", train.size(),
              test.size(), out_dir.c_str());
  return 0;
}

int cmd_dataset_label(const std::string& case_path, const std::string& train_path,
                      const std::string& test_path, const std::string& out_dir,
                      int workers, double tol_pf, double tol_qp,
                      bool keep_unconverged) {
  const Network net = load_case(case_path);
  fs::create_directories(out_dir);

  LabelOptions lopt;
  lopt.workers = workers;
  lopt.keep_unconverged = keep_unconverged;
  lopt.opf.pf.tolerance = tol_pf;
  lopt.opf.qp.tol_feasible = tol_qp;

  json manifest;
  manifest["kind"] = "dataset";
  manifest["case"] = case_path;
  manifest["case_fingerprint"] = network_fingerprint(net);
  manifest["labeled"] = true;

  auto label_one = [&](const std::string& in_path, const char* out_name) {
    Dataset ds = read_dataset_csv(net, in_path);
    const LabelStats stats = label_dataset(net, ds, lopt);
    const std::string dest = (fs::path(out_dir) / out_name).string();
    write_dataset_csv(net, ds, dest + ".tmp", true);
    fs::rename(dest + ".tmp", dest);
    json drops = json::array();
    for (size_t i = 0; i < stats.dropped.size(); ++i)
      drops.push_back({{"record", stats.dropped[i]},
                       {"reason", stats.drop_reasons[i]}});
    manifest[out_name == std::string("train.csv") ? "train" : "test"] = {
        {"file", out_name},
        {"records", stats.labeled},
        {"attempted", stats.attempted},
        {"dropped", drops}};
    std::printf("%s: labeled %d of %d records\n", out_name, stats.labeled,
                stats.attempted);
  };

  label_one(train_path, "train.csv");
  if (!test_path.empty()) label_one(test_path, "test.csv");
  write_file_atomic((fs::path(out_dir) / "manifest.json").string(),
                    manifest.dump(2) + "\n");
  return 0;
}

int cmd_eval_run(const RunConfig& cfg) {
  const RunOutcome out = run_evaluation(cfg);
  std::printf("%s", summary_to_markdown(out.summary).c_str());
  std::printf("evaluated %d test records against %d training records in %.1fs\n",
              out.test_records, out.train_records, out.wall_seconds);
  std::printf("results under %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_report_render(const std::string& out_dir) {
  std::ifstream in(fs::path(out_dir) / "summary.tsv");
  if (!in) {
    std::fprintf(stderr, "no summary.tsv under '%s'\n", out_dir.c_str());
    return 1;
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  const auto rows = parse_summary_tsv(text);
  const std::string md = summary_to_markdown(rows);
  write_file_atomic((fs::path(out_dir) / "summary.md").string(), md);
  std::printf("%s", md.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dispatch learning and convex redispatch toolkit"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file supplying default option values");
  app.allow_config_extras(true);

  std::string case_path, train_path, test_path, out_dir, method;
  std::vector<std::string> methods = {"knn", "dc", "kt-dc", "kt-ac"};
  int k = 100, segments = 12, workers = 1;
  int train_n = 1000, test_n = 100;
  uint64_t seed = 0;
  double tol_pf = 1e-8, tol_qp = 1e-8;
  bool keep_unconverged = false;
  GenerateOptions shape;

  auto add_case = [&](CLI::App* cmd) {
    cmd->add_option("--case", case_path, "network case file")
        ->required()
        ->check(CLI::ExistingFile);
  };

  CLI::App* c_case = app.add_subcommand("case", "network file utilities");
  c_case->require_subcommand(1);
  CLI::App* c_validate =
      c_case->add_subcommand("validate", "parse a case and report problems")
          ->configurable();
  add_case(c_validate);

  CLI::App* c_pf = app.add_subcommand("pf", "nonlinear balance solves");
  c_pf->require_subcommand(1);
  CLI::App* c_pf_run =
      c_pf->add_subcommand("run", "solve the case at nominal demand")
          ->configurable();
  add_case(c_pf_run);
  c_pf_run->add_option("--tol-pf", tol_pf, "balance mismatch tolerance");

  CLI::App* c_opf = app.add_subcommand("opf", "dispatch optimization");
  c_opf->require_subcommand(1);
  CLI::App* c_opf_solve =
      c_opf->add_subcommand("solve", "optimize dispatch at nominal demand")
          ->configurable();
  add_case(c_opf_solve);
  c_opf_solve->add_option("--method", method, "ac, dc, kt-ac or kt-dc")
      ->required()
      ->check(CLI::IsMember({"ac", "dc", "kt-ac", "kt-dc"}));
  c_opf_solve->add_option("--train", train_path,
                          "labeled training set for neighbour anchoring")
      ->check(CLI::ExistingFile);
  c_opf_solve->add_option("--k", k, "neighbours to average");
  c_opf_solve->add_option("--segments", segments, "rating disc polygon sides");
  c_opf_solve->add_option("--tol-pf", tol_pf, "balance mismatch tolerance");
  c_opf_solve->add_option("--tol-qp", tol_qp, "subproblem feasibility tolerance");

  CLI::App* c_ds = app.add_subcommand("dataset", "demand scenario sets");
  c_ds->require_subcommand(1);
  CLI::App* c_gen =
      c_ds->add_subcommand("generate", "sample demand scenarios")->configurable();
  add_case(c_gen);
  c_gen->add_option("--train", train_n, "training records to sample")->required();
  c_gen->add_option("--test", test_n, "test records to sample")->required();
  c_gen->add_option("--seed", seed, "sampling seed");
  c_gen->add_option("--out", out_dir, "output directory")->required();
  c_gen->add_option("--scale-min", shape.scale_min, "demand multiplier lower end");
  c_gen->add_option("--scale-max", shape.scale_max, "demand multiplier upper end");
  c_gen->add_option("--noise", shape.per_node_noise, "per-bus relative spread");
  c_gen->add_option("--q-jitter", shape.q_jitter, "reactive share wobble");

  CLI::App* c_label =
      c_ds->add_subcommand("label", "attach reference solutions")->configurable();
  add_case(c_label);
  c_label->add_option("--train", train_path, "training scenarios CSV")
      ->required()
      ->check(CLI::ExistingFile);
  c_label->add_option("--test", test_path, "test scenarios CSV")
      ->check(CLI::ExistingFile);
  c_label->add_option("--out", out_dir, "output directory")->required();
  c_label->add_option("--workers", workers, "solver threads");
  c_label->add_option("--tol-pf", tol_pf, "balance mismatch tolerance");
  c_label->add_option("--tol-qp", tol_qp, "subproblem feasibility tolerance");
  c_label->add_flag("--keep-unconverged", keep_unconverged,
                    "keep feasible but iteration-limited labels");

  CLI::App* c_eval = app.add_subcommand("eval", "method comparison runs");
  c_eval->require_subcommand(1);
  CLI::App* c_eval_run =
      c_eval->add_subcommand("run", "score methods on a labeled test set")
          ->configurable();
  add_case(c_eval_run);
  c_eval_run->add_option("--train", train_path, "labeled training CSV")
      ->required()
      ->check(CLI::ExistingFile);
  c_eval_run->add_option("--test", test_path, "labeled test CSV")
      ->required()
      ->check(CLI::ExistingFile);
  c_eval_run
      ->add_option("--methods", methods, "methods to score (knn,dc,kt-dc,kt-ac)")
      ->delimiter(',');
  c_eval_run->add_option("--k", k, "neighbours to average");
  c_eval_run->add_option("--segments", segments, "rating disc polygon sides");
  c_eval_run->add_option("--out", out_dir, "output directory")->required();
  c_eval_run->add_option("--workers", workers, "evaluation threads");
  c_eval_run->add_option("--tol-pf", tol_pf, "balance mismatch tolerance");
  c_eval_run->add_option("--tol-qp", tol_qp, "subproblem feasibility tolerance");

  CLI::App* c_report = app.add_subcommand("report", "rendered outputs");
  c_report->require_subcommand(1);
  CLI::App* c_render =
      c_report->add_subcommand("render", "rebuild summary.md from summary.tsv")
          ->configurable();
  c_render->add_option("--out", out_dir, "evaluation output directory")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_validate->parsed()) return cmd_case_validate(case_path);
    if (c_pf_run->parsed()) return cmd_pf_run(case_path, tol_pf);
    if (c_opf_solve->parsed())
      return cmd_opf_solve(case_path, method, train_path, k, segments, tol_pf,
                           tol_qp);
    if (c_gen->parsed())
      return cmd_dataset_generate(case_path, train_n, test_n, seed, out_dir,
                                  shape);
    if (c_label->parsed())
      return cmd_dataset_label(case_path, train_path, test_path, out_dir,
                               workers, tol_pf, tol_qp, keep_unconverged);
    if (c_eval_run->parsed()) {
      RunConfig cfg;
      cfg.case_path = case_path;
      cfg.train_path = train_path;
      cfg.test_path = test_path;
      cfg.out_dir = out_dir;
      cfg.methods.clear();
      for (const auto& m : methods) cfg.methods.push_back(method_from_string(m));
      cfg.k = k;
      cfg.segments = segments;
      cfg.workers = workers;
      cfg.tol_pf = tol_pf;
      cfg.tol_qp = tol_qp;
      return cmd_eval_run(cfg);
    }
    if (c_render->parsed()) return cmd_report_render(out_dir);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 1;
}
