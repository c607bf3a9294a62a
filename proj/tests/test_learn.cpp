#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ktopf/learn.hpp"
#include "helpers.hpp"

using namespace ktopf;
using namespace ktopf::testing;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("ktopf_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
  static inline int counter = 0;
};

}  // namespace

TEST_CASE("scenario sampling is reproducible and shaped by its knobs") {
  const Network net = load_named_case("case14");
  GenerateOptions opt;
  opt.count = 50;
  opt.seed = 123;

  const Dataset a = generate_dataset(net, opt);
  const Dataset b = generate_dataset(net, opt);
  REQUIRE(a.size() == 50);
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.records[static_cast<size_t>(i)].pd ==
          b.records[static_cast<size_t>(i)].pd);
    CHECK(a.records[static_cast<size_t>(i)].qd ==
          b.records[static_cast<size_t>(i)].qd);
  }

  opt.seed = 124;
  const Dataset c = generate_dataset(net, opt);
  CHECK(a.records[0].pd != c.records[0].pd);

  // buses with zero nominal draw stay at zero; others stay in a plausible band
  for (const auto& rec : a.records) {
    for (size_t n = 0; n < net.buses.size(); ++n) {
      const double nom = net.buses[n].p_demand;
      if (nom == 0.0) {
        CHECK(rec.pd[n] == 0.0);
      } else {
        CHECK(rec.pd[n] / nom > 0.6);
        CHECK(rec.pd[n] / nom < 1.5);
      }
    }
    CHECK(!rec.labeled);
  }
}

TEST_CASE("dataset files survive a write-read cycle bit for bit") {
  const Network net = load_named_case("case14");
  GenerateOptions opt;
  opt.count = 8;
  opt.seed = 5;
  Dataset ds = generate_dataset(net, opt);

  TempDir tmp;
  write_dataset_csv(net, ds, tmp.file("plain.csv"), false);
  const Dataset back = read_dataset_csv(net, tmp.file("plain.csv"));
  REQUIRE(back.size() == ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    CHECK(back.records[static_cast<size_t>(i)].pd ==
          ds.records[static_cast<size_t>(i)].pd);
    CHECK(back.records[static_cast<size_t>(i)].qd ==
          ds.records[static_cast<size_t>(i)].qd);
    CHECK(!back.records[static_cast<size_t>(i)].labeled);
  }

  // write-read-write produces identical bytes
  write_dataset_csv(net, back, tmp.file("again.csv"), false);
  CHECK(slurp(tmp.file("plain.csv")) == slurp(tmp.file("again.csv")));
}

TEST_CASE("labeled files carry the solution columns") {
  const Network net = load_named_case("case14");
  GenerateOptions gopt;
  gopt.count = 3;
  gopt.seed = 77;
  Dataset ds = generate_dataset(net, gopt);

  const LabelStats stats = label_dataset(net, ds);
  REQUIRE(stats.attempted == 3);
  REQUIRE(stats.labeled == 3);
  CHECK(stats.dropped.empty());
  for (const auto& rec : ds.records) {
    REQUIRE(rec.labeled);
    CHECK(rec.objective > 0.0);
    CHECK(rec.residual < 1e-6);
    REQUIRE(rec.pg.size() == static_cast<size_t>(net.n_gens()));
    REQUIRE(rec.vg.size() == static_cast<size_t>(net.n_gen_buses()));
  }

  TempDir tmp;
  write_dataset_csv(net, ds, tmp.file("labeled.csv"), true);
  const Dataset back = read_dataset_csv(net, tmp.file("labeled.csv"));
  REQUIRE(back.labeled_count() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.records[static_cast<size_t>(i)].pg ==
          ds.records[static_cast<size_t>(i)].pg);
    CHECK(back.records[static_cast<size_t>(i)].vg ==
          ds.records[static_cast<size_t>(i)].vg);
    CHECK(back.records[static_cast<size_t>(i)].objective ==
          ds.records[static_cast<size_t>(i)].objective);
  }
}

TEST_CASE("header must match the network") {
  const Network net = load_named_case("case14");
  TempDir tmp;
  {
    std::ofstream out(tmp.file("bad.csv"));
    out << "pd_1,pd_2\n0.1,0.2\n";
  }
  CHECK_THROWS_WITH(read_dataset_csv(net, tmp.file("bad.csv")),
                    Catch::Matchers::ContainsSubstring("header"));

  {
    std::ofstream out(tmp.file("short.csv"));
    out << dataset_header(net, false) << "\n1,2,3\n";
  }
  CHECK_THROWS_WITH(read_dataset_csv(net, tmp.file("short.csv")),
                    Catch::Matchers::ContainsSubstring("columns"));
}

TEST_CASE("neighbour averaging weights the k closest labeled records") {
  const Network net = load_named_case("case14");
  const size_t nb = net.buses.size();
  const size_t ng = static_cast<size_t>(net.n_gens());
  const size_t ngb = static_cast<size_t>(net.n_gen_buses());

  Dataset train;
  auto add = [&](double offset, double pg_value, bool labeled) {
    Record rec;
    rec.pd.assign(nb, offset);
    rec.qd.assign(nb, 0.0);
    rec.pg.assign(ng, pg_value);
    rec.vg.assign(ngb, 1.0);
    rec.objective = pg_value;
    rec.residual = 0.0;
    rec.labeled = labeled;
    train.records.push_back(rec);
  };
  add(0.00, 1.0, true);
  add(0.01, 2.0, true);
  add(0.02, 4.0, true);
  add(0.00, 100.0, false);  // unlabeled twin of the closest record

  const std::vector<double> pd(nb, 0.0), qd(nb, 0.0);

  // k = 1 finds the exact (labeled) match
  Dispatch d1 = knn_predict(net, train, 1, pd, qd);
  CHECK(d1.p_gen[0] == 1.0);

  // k = 2 averages the two closest
  Dispatch d2 = knn_predict(net, train, 2, pd, qd);
  CHECK_THAT(d2.p_gen[0], Catch::Matchers::WithinAbs(1.5, 1e-12));

  // k beyond the labeled pool clamps to what exists
  Dispatch d9 = knn_predict(net, train, 9, pd, qd);
  CHECK_THAT(d9.p_gen[0], Catch::Matchers::WithinAbs(7.0 / 3.0, 1e-12));

  // predicted cost is the cost of the averaged dispatch
  CHECK_THAT(d2.cost, Catch::Matchers::WithinAbs(dispatch_cost(net, d2.p_gen), 1e-12));
}

TEST_CASE("equidistant neighbours resolve toward the earlier record") {
  const Network net = load_named_case("case14");
  const size_t nb = net.buses.size();

  Dataset train;
  auto add = [&](double first_bus, double pg_value) {
    Record rec;
    rec.pd.assign(nb, 0.0);
    rec.pd[0] = first_bus;
    rec.qd.assign(nb, 0.0);
    rec.pg.assign(static_cast<size_t>(net.n_gens()), pg_value);
    rec.vg.assign(static_cast<size_t>(net.n_gen_buses()), 1.0);
    rec.labeled = true;
    train.records.push_back(rec);
  };
  add(+0.1, 10.0);  // same distance from the origin as the next one
  add(-0.1, 20.0);
  add(+0.3, 30.0);

  const std::vector<double> pd(nb, 0.0), qd(nb, 0.0);
  Dispatch d = knn_predict(net, train, 1, pd, qd);
  CHECK(d.p_gen[0] == 10.0);
}

TEST_CASE("prediction needs at least one labeled record") {
  const Network net = load_named_case("case14");
  Dataset train;
  Record rec;
  rec.pd.assign(net.buses.size(), 0.0);
  rec.qd.assign(net.buses.size(), 0.0);
  train.records.push_back(rec);  // present but unlabeled
  const std::vector<double> pd(net.buses.size(), 0.0), qd(net.buses.size(), 0.0);
  CHECK_THROWS(knn_predict(net, train, 3, pd, qd));
}
