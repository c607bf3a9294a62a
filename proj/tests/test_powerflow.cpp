#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "helpers.hpp"
#include "ktopf/common.hpp"
#include "ktopf/powerflow.hpp"

using namespace ktopf;
using namespace ktopf::testing;

TEST_CASE("branch flows match the complex-power oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Branch br;
    br.from_bus = 0;
    br.to_bus = 1;
    br.r = rng.uniform(0.0, 0.05);
    br.x = rng.uniform(0.02, 0.3);
    br.b_charging = rng.uniform(0.0, 0.06);
    br.tap = rng.uniform(0.9, 1.1);
    br.shift = rng.uniform(-0.2, 0.2);
    br.k = compute_branch_constants(br);

    const double vn = rng.uniform(0.9, 1.1), vm = rng.uniform(0.9, 1.1);
    const double thn = rng.uniform(-0.4, 0.4), thm = rng.uniform(-0.4, 0.4);
    const BranchFlow f = branch_flow(br.k, vn, vm, thn - thm);
    const auto S = oracle_terminal_power(br, vn, vm, thn, thm);
    CHECK(f.p_from == Catch::Approx(S[0].real()).margin(1e-12));
    CHECK(f.q_from == Catch::Approx(S[0].imag()).margin(1e-12));
    CHECK(f.p_to == Catch::Approx(S[1].real()).margin(1e-12));
    CHECK(f.q_to == Catch::Approx(S[1].imag()).margin(1e-12));
  }
}

TEST_CASE("flow sensitivities agree with central differences") {
  Rng rng(11);
  const double h = 1e-6;
  for (int trial = 0; trial < 40; ++trial) {
    Branch br;
    br.from_bus = 0;
    br.to_bus = 1;
    br.r = rng.uniform(0.0, 0.08);
    br.x = rng.uniform(0.02, 0.4);
    br.b_charging = rng.uniform(0.0, 0.05);
    br.tap = rng.uniform(0.9, 1.1);
    br.shift = rng.uniform(-0.15, 0.15);
    br.k = compute_branch_constants(br);

    const double vn = rng.uniform(0.94, 1.06), vm = rng.uniform(0.94, 1.06);
    const double thn = rng.uniform(-0.3, 0.3), thm = rng.uniform(-0.3, 0.3);
    const BranchPartials d = branch_partials(br.k, vn, vm, thn - thm);

    auto fd = [&](auto eval) {
      return (eval(h) - eval(-h)) / (2.0 * h);
    };
    auto check = [](double analytic, double numeric) {
      CHECK(analytic ==
            Catch::Approx(numeric).epsilon(1e-6).margin(1e-8));
    };

    check(d.dpf_dvn, fd([&](double e) { return branch_flow(br.k, vn + e, vm, thn - thm).p_from; }));
    check(d.dpf_dvm, fd([&](double e) { return branch_flow(br.k, vn, vm + e, thn - thm).p_from; }));
    check(d.dpf_dth, fd([&](double e) { return branch_flow(br.k, vn, vm, thn + e - thm).p_from; }));
    check(d.dqf_dvn, fd([&](double e) { return branch_flow(br.k, vn + e, vm, thn - thm).q_from; }));
    check(d.dqf_dvm, fd([&](double e) { return branch_flow(br.k, vn, vm + e, thn - thm).q_from; }));
    check(d.dqf_dth, fd([&](double e) { return branch_flow(br.k, vn, vm, thn + e - thm).q_from; }));
    // to-side angle sensitivities are taken w.r.t. theta_m - theta_n
    check(d.dpt_dvm, fd([&](double e) { return branch_flow(br.k, vn, vm + e, thn - thm).p_to; }));
    check(d.dpt_dvn, fd([&](double e) { return branch_flow(br.k, vn + e, vm, thn - thm).p_to; }));
    check(d.dpt_dth, fd([&](double e) { return branch_flow(br.k, vn, vm, thn - (thm + e)).p_to; }));
    check(d.dqt_dvm, fd([&](double e) { return branch_flow(br.k, vn, vm + e, thn - thm).q_to; }));
    check(d.dqt_dvn, fd([&](double e) { return branch_flow(br.k, vn + e, vm, thn - thm).q_to; }));
    check(d.dqt_dth, fd([&](double e) { return branch_flow(br.k, vn, vm, thn - (thm + e)).q_to; }));
  }
}

TEST_CASE("two-bus balance has the textbook closed form") {
  const double x = 0.1, pd = 0.5, qd = 0.2, v1 = 1.02;
  const Network net = two_bus(0.0, x, 0.0, pd, qd, v1);

  const std::vector<double> pdv = {0.0, pd}, qdv = {0.0, qd};
  const std::vector<double> pg = {0.0}, vg = {v1};
  const PowerFlowResult r = solve_power_flow(net, pdv, qdv, pg, vg);
  REQUIRE(r.converged);
  CHECK(r.iterations <= 6);

  // exact solution of the two quadratic balance equations
  const double A = v1 * v1 - 2.0 * qd * x;
  const double u = (A + std::sqrt(A * A - 4.0 * x * x * (pd * pd + qd * qd))) / 2.0;
  const double v2 = std::sqrt(u);
  const double th2 = std::asin(-pd * x / (v1 * v2));
  CHECK(r.v[1] == Catch::Approx(v2).margin(1e-9));
  CHECK(r.theta[1] == Catch::Approx(th2).margin(1e-9));
  CHECK(v2 == Catch::Approx(0.99874557).margin(1e-6));
  CHECK(th2 == Catch::Approx(-0.0491009).margin(1e-6));

  // lossless line: the slack covers exactly the demand
  CHECK(r.p_slack == Catch::Approx(pd).margin(1e-8));
  REQUIRE(r.q_gen_bus.size() == 1);
  CHECK(r.q_gen_bus[0] > qd);  // the line consumes reactive power
}

TEST_CASE("full network balance against an independent admittance oracle") {
  const Network net = load_named_case("case14");
  std::vector<double> pd(14), qd(14);
  for (int n = 0; n < 14; ++n) {
    pd[static_cast<size_t>(n)] = net.buses[static_cast<size_t>(n)].p_demand;
    qd[static_cast<size_t>(n)] = net.buses[static_cast<size_t>(n)].q_demand;
  }
  std::vector<double> pg(5), vg(5);
  for (int g = 0; g < 5; ++g)
    pg[static_cast<size_t>(g)] = net.generators[static_cast<size_t>(g)].p_initial;
  for (int j = 0; j < 5; ++j) {
    const int bus = net.gen_bus_list[static_cast<size_t>(j)];
    for (const auto& g : net.generators)
      if (g.bus == bus) {
        vg[static_cast<size_t>(j)] = g.v_setpoint;
        break;
      }
  }

  const PowerFlowResult r = solve_power_flow(net, pd, qd, pg, vg);
  REQUIRE(r.converged);
  CHECK(r.iterations <= 10);
  CHECK(r.max_mismatch < 1e-8);

  // independently rebuilt complex nodal balance
  using cd = std::complex<double>;
  std::vector<cd> V(14), S(14, cd(0, 0));
  for (int n = 0; n < 14; ++n)
    V[static_cast<size_t>(n)] = std::polar(r.v[static_cast<size_t>(n)],
                                           r.theta[static_cast<size_t>(n)]);
  for (const auto& br : net.branches) {
    const auto S2 = oracle_terminal_power(
        br, r.v[static_cast<size_t>(br.from_bus)], r.v[static_cast<size_t>(br.to_bus)],
        r.theta[static_cast<size_t>(br.from_bus)], r.theta[static_cast<size_t>(br.to_bus)]);
    S[static_cast<size_t>(br.from_bus)] += S2[0];
    S[static_cast<size_t>(br.to_bus)] += S2[1];
  }
  for (int n = 0; n < 14; ++n) {
    const Bus& b = net.buses[static_cast<size_t>(n)];
    const double v2 = r.v[static_cast<size_t>(n)] * r.v[static_cast<size_t>(n)];
    S[static_cast<size_t>(n)] += cd(v2 * b.g_shunt, -v2 * b.b_shunt);
  }
  // at every non-slack bus the computed draw equals generation minus demand
  for (int n = 1; n < 14; ++n) {
    double p_gen_here = 0.0;
    for (int g = 0; g < 5; ++g)
      if (net.generators[static_cast<size_t>(g)].bus == n)
        p_gen_here += pg[static_cast<size_t>(g)];
    CHECK(S[static_cast<size_t>(n)].real() ==
          Catch::Approx(p_gen_here - pd[static_cast<size_t>(n)]).margin(1e-7));
  }
  // load buses also balance reactive power with zero generation
  for (int n = 0; n < 14; ++n) {
    if (net.gen_bus_pos(n) >= 0) continue;
    CHECK(S[static_cast<size_t>(n)].imag() ==
          Catch::Approx(-qd[static_cast<size_t>(n)]).margin(1e-7));
  }

  // the held voltages are the setpoints; the slack absorbs system losses
  for (int j = 0; j < 5; ++j)
    CHECK(r.v[static_cast<size_t>(net.gen_bus_list[static_cast<size_t>(j)])] ==
          Catch::Approx(vg[static_cast<size_t>(j)]));
  CHECK(r.p_slack == Catch::Approx(2.32393).margin(2e-3));

  // published magnitudes for this network, rounded to three decimals
  const double vm_ref[14] = {1.06,  1.045, 1.01,  1.019, 1.02,  1.07, 1.062,
                             1.09,  1.056, 1.051, 1.057, 1.055, 1.05, 1.036};
  for (int n = 0; n < 14; ++n)
    CHECK(r.v[static_cast<size_t>(n)] ==
          Catch::Approx(vm_ref[n]).margin(2e-3));
}

TEST_CASE("divergence is reported, not masked") {
  const Network net = two_bus(0.0, 0.1, 0.0, 30.0, 0.0);  // far beyond capacity
  const std::vector<double> pdv = {0.0, 30.0}, qdv = {0.0, 0.0};
  const PowerFlowResult r =
      solve_power_flow(net, pdv, qdv, {0.0}, {1.0});
  CHECK(!r.converged);
}

TEST_CASE("bus reactive split follows the q ranges") {
  Network net = two_bus(0.01, 0.1);
  Generator extra = net.generators[0];
  extra.q_min = -1.0;
  extra.q_max = 1.0;  // width 2 against width 10
  net.generators.push_back(extra);
  net.finalize();

  const std::vector<double> q_bus = {1.2};
  const auto q = allocate_reactive(net, q_bus);
  REQUIRE(q.size() == 2);
  CHECK(q[0] == Catch::Approx(1.2 * 10.0 / 12.0));
  CHECK(q[1] == Catch::Approx(1.2 * 2.0 / 12.0));
  CHECK(q[0] + q[1] == Catch::Approx(1.2));

  // degenerate ranges fall back to an even split
  net.generators[0].q_min = net.generators[0].q_max = 0.0;
  net.generators[1].q_min = net.generators[1].q_max = 0.0;
  const auto even = allocate_reactive(net, q_bus);
  CHECK(even[0] == Catch::Approx(0.6));
  CHECK(even[1] == Catch::Approx(0.6));
}
