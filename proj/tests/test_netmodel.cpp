#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "ktopf/matpower.hpp"
#include "ktopf/netmodel.hpp"

using namespace ktopf;
using namespace ktopf::testing;

static Branch make_branch(double r, double x, double b = 0, double tap = 1,
                          double shift = 0) {
  Branch br;
  br.from_bus = 0;
  br.to_bus = 1;
  br.r = r;
  br.x = x;
  br.b_charging = b;
  br.tap = tap;
  br.shift = shift;
  br.k = compute_branch_constants(br);
  return br;
}

TEST_CASE("branch constants: pure reactance") {
  const Branch br = make_branch(0.0, 1.0);
  CHECK(br.k.g_ff == 0.0);
  CHECK(br.k.b_ff == Catch::Approx(-1.0));
  CHECK(br.k.g_ft == 0.0);
  CHECK(br.k.b_ft == Catch::Approx(1.0));
  CHECK(br.k.b_tf == Catch::Approx(1.0));
  CHECK(br.k.b_tt == Catch::Approx(-1.0));
}

TEST_CASE("branch constants: off-nominal tap scales the from side") {
  const Branch br = make_branch(0.0, 1.0, 0.0, 2.0);
  CHECK(br.k.b_ff == Catch::Approx(-0.25));
  CHECK(br.k.b_ft == Catch::Approx(0.5));
  CHECK(br.k.b_tf == Catch::Approx(0.5));
  CHECK(br.k.b_tt == Catch::Approx(-1.0));
}

TEST_CASE("branch constants: lossy line with charging") {
  const Branch br = make_branch(0.01, 0.1, 0.02);
  CHECK(br.k.g_ff == Catch::Approx(0.99009900990099));
  CHECK(br.k.b_ff == Catch::Approx(-9.89099009900990));
  CHECK(br.k.g_ft == Catch::Approx(-0.99009900990099));
  CHECK(br.k.b_ft == Catch::Approx(9.90099009900990));
}

TEST_CASE("branch constants match the transformer composition oracle") {
  const double rs[] = {0.0, 0.01, 0.05};
  const double taps[] = {1.0, 0.95, 1.05};
  const double shifts[] = {0.0, 0.1, -0.2};
  for (double r : rs)
    for (double tap : taps)
      for (double shift : shifts) {
        const Branch br = make_branch(r, 0.2, 0.04, tap, shift);
        const auto Y = oracle_two_port(r, 0.2, 0.04, tap, shift);
        CHECK(br.k.g_ff == Catch::Approx(Y[0].real()).margin(1e-14));
        CHECK(br.k.b_ff == Catch::Approx(Y[0].imag()).margin(1e-14));
        CHECK(br.k.g_ft == Catch::Approx(Y[1].real()).margin(1e-14));
        CHECK(br.k.b_ft == Catch::Approx(Y[1].imag()).margin(1e-14));
        CHECK(br.k.g_tf == Catch::Approx(Y[2].real()).margin(1e-14));
        CHECK(br.k.b_tf == Catch::Approx(Y[2].imag()).margin(1e-14));
        CHECK(br.k.g_tt == Catch::Approx(Y[3].real()).margin(1e-14));
        CHECK(br.k.b_tt == Catch::Approx(Y[3].imag()).margin(1e-14));
      }
}

TEST_CASE("case file: tables, per-unit scaling, re-indexing") {
  const Network net = load_named_case("case14");
  REQUIRE(net.n_buses() == 14);
  REQUIRE(net.n_branches() == 20);
  REQUIRE(net.n_gens() == 5);
  CHECK(net.base_mva == 100.0);
  CHECK(net.slack_bus == 0);
  CHECK(net.bus_ids[0] == 1);
  CHECK(net.bus_ids[13] == 14);

  CHECK(net.buses[1].p_demand == Catch::Approx(0.217));
  CHECK(net.buses[1].q_demand == Catch::Approx(0.127));
  CHECK(net.buses[8].b_shunt == Catch::Approx(0.19));
  CHECK(net.buses[3].q_demand == Catch::Approx(-0.039));
  CHECK(net.buses[0].v_max == Catch::Approx(1.06));
  CHECK(net.buses[0].v_min == Catch::Approx(0.94));

  const Branch& b47 = net.branches[7];
  CHECK(net.bus_ids[static_cast<size_t>(b47.from_bus)] == 4);
  CHECK(net.bus_ids[static_cast<size_t>(b47.to_bus)] == 7);
  CHECK(b47.tap == Catch::Approx(0.978));
  CHECK(b47.x == Catch::Approx(0.20912));
  CHECK(net.branches[0].tap == 1.0);  // ratio 0 means nominal
  CHECK(!net.branches[0].has_limit());

  const Generator& g0 = net.generators[0];
  CHECK(g0.p_max == Catch::Approx(3.324));
  CHECK(g0.q_max == Catch::Approx(0.10));
  CHECK(g0.cost_quadratic == Catch::Approx(0.0430292599 * 100 * 100));
  CHECK(g0.cost_linear == Catch::Approx(20.0 * 100));
  CHECK(g0.v_setpoint == Catch::Approx(1.06));
  CHECK(net.generators[1].q_min == Catch::Approx(-0.40));

  CHECK(net.gen_bus_list == std::vector<int>{0, 1, 2, 5, 7});
  CHECK(net.slack_gen() == 0);
  CHECK(net.gen_bus_pos(5) == 3);
  CHECK(net.gen_bus_pos(4) == -1);
  CHECK(validate_network(net).empty());
}

TEST_CASE("case file: out-of-service rows are dropped together") {
  std::istringstream in(R"(function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 2 1 10 2 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 30 -30 1.0 100 1 50 0;
 1 0 0 30 -30 1.0 100 0 99 0;
];
mpc.branch = [
 1 2 0.01 0.1 0 0 0 0 0 0 1;
 1 2 0.01 0.2 0 0 0 0 0 0 0;
];
mpc.gencost = [
 2 0 0 3 0.1 10 0;
 2 0 0 3 9.9 99 9;
];
)");
  const Network net = parse_matpower(in);
  REQUIRE(net.n_gens() == 1);
  REQUIRE(net.n_branches() == 1);
  CHECK(net.generators[0].p_max == Catch::Approx(0.5));
  CHECK(net.generators[0].cost_linear == Catch::Approx(1000.0));
  CHECK(net.branches[0].x == Catch::Approx(0.1));
}

static std::string parse_failure(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_matpower(in, "t.m");
  } catch (const CaseParseError& e) {
    return e.what();
  }
  return "";
}

TEST_CASE("case file: malformed input is reported with position") {
  const std::string ok_tail = R"(
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 2 1 10 2 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 30 -30 1.0 100 1 50 0; ];
mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.1 10 0; ];
)";

  CHECK(parse_failure("function mpc = t\n" + ok_tail)
            .find("baseMVA") != std::string::npos);

  std::string msg = parse_failure("function mpc = t\nmpc.baseMVA = 100;\n"
                                  "mpc.bus = [\n 1 3 0 0 zz;\n];" + ok_tail);
  CHECK(msg.find("line 4") != std::string::npos);
  CHECK(msg.find("zz") != std::string::npos);

  msg = parse_failure(
      "function mpc = t\nmpc.baseMVA = 100;\nmpc.bogus true;\n" + ok_tail);
  CHECK(msg.find("t.m:3") != std::string::npos);

  // branch pointing at a bus that does not exist
  msg = parse_failure(R"(function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 2 1 10 2 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 30 -30 1.0 100 1 50 0; ];
mpc.branch = [ 1 7 0.01 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.1 10 0; ];
)");
  CHECK(msg.find("unknown bus 7") != std::string::npos);
  CHECK(msg.find(":8") != std::string::npos);

  // two reference buses
  msg = parse_failure(R"(function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 2 3 10 2 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 30 -30 1.0 100 1 50 0; ];
mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.1 10 0; ];
)");
  CHECK(msg.find("exactly one slack") != std::string::npos);

  // gencost rows must line up with gen rows
  msg = parse_failure(R"(function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 2 1 10 2 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 30 -30 1.0 100 1 50 0; ];
mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.1 10 0; 2 0 0 3 0.1 10 0; ];
)");
  CHECK(msg.find("gencost") != std::string::npos);

  // piecewise-linear cost model is outside the supported subset
  msg = parse_failure(R"(function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 2 1 10 2 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 30 -30 1.0 100 1 50 0; ];
mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [ 1 0 0 2 0 0 10 100; ];
)");
  CHECK(msg.find("model 2") != std::string::npos);

  msg = parse_failure(R"(function mpc = t
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
 1 1 10 2 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 30 -30 1.0 100 1 50 0; ];
mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.1 10 0; ];
)");
  CHECK(msg.find("duplicate bus id 1") != std::string::npos);
}

TEST_CASE("validate: structural problems are named") {
  Network net = two_bus(0.01, 0.1);
  CHECK(validate_network(net).empty());

  Network broken = net;
  broken.buses[0].v_min = 1.3;  // above v_max
  auto diags = validate_network(broken);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].find("v_min") != std::string::npos);

  broken = net;
  Bus island;
  island.id = 3;
  broken.buses.push_back(island);
  broken.bus_ids.push_back(3);
  diags = validate_network(broken);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].find("unreachable") != std::string::npos);

  broken = net;
  broken.generators.clear();
  diags = validate_network(broken);
  CHECK(diags.size() == 2);  // no generators, and slack bus hosts none

  broken = net;
  broken.branches[0].tap = 0.0;
  diags = validate_network(broken);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].find("tap") != std::string::npos);
}

TEST_CASE("json form: round trip and fingerprint stability") {
  const Network net = load_named_case("case14");
  const json j = network_to_json(net);
  const Network back = network_from_json(j);
  CHECK(network_to_json(back) == j);
  CHECK(back.n_branches() == net.n_branches());
  CHECK(back.branches[7].k.b_ft == Catch::Approx(net.branches[7].k.b_ft));
  CHECK(back.slack_bus == net.slack_bus);

  const std::string fp = network_fingerprint(net);
  CHECK(fp.size() == 16);
  CHECK(fp == network_fingerprint(back));

  Network tweaked = net;
  tweaked.branches[0].r += 1e-9;
  CHECK(network_fingerprint(tweaked) != fp);
}
