#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include "ktopf/matpower.hpp"
#include "ktopf/netmodel.hpp"

namespace ktopf::testing {

inline std::string data_path(const std::string& rel) {
  return std::string(KTOPF_DATA_DIR) + "/" + rel;
}

inline Network load_named_case(const std::string& name) {
  return load_case(data_path("cases/" + name + ".m"));
}

// two-bus link: slack generator feeding one load over a single line
inline Network two_bus(double r, double x, double b = 0.0, double pd = 0.5,
                       double qd = 0.2, double v_slack = 1.02) {
  Network net;
  net.base_mva = 100.0;
  Bus b1;
  b1.id = 1;
  b1.v_min = 0.8;
  b1.v_max = 1.2;
  Bus b2 = b1;
  b2.id = 2;
  b2.p_demand = pd;
  b2.q_demand = qd;
  net.buses = {b1, b2};
  Branch line;
  line.from_bus = 0;
  line.to_bus = 1;
  line.r = r;
  line.x = x;
  line.b_charging = b;
  net.branches = {line};
  Generator g;
  g.bus = 0;
  g.p_min = -5;
  g.p_max = 5;
  g.q_min = -5;
  g.q_max = 5;
  g.cost_linear = 10.0;
  g.v_setpoint = v_slack;
  net.generators = {g};
  net.slack_bus = 0;
  net.finalize();
  return net;
}

// five buses, three units, purely reactive lines; two rated links so capacity
// rows are exercised
inline Network five_bus_lossless() {
  Network net;
  net.base_mva = 100.0;
  net.buses.resize(5);
  for (int n = 0; n < 5; ++n) {
    net.buses[static_cast<size_t>(n)].id = n + 1;
    net.buses[static_cast<size_t>(n)].v_min = 0.9;
    net.buses[static_cast<size_t>(n)].v_max = 1.1;
  }
  net.buses[2].p_demand = 1.2;
  net.buses[3].p_demand = 0.8;
  net.buses[4].p_demand = 0.5;

  auto link = [&](int f, int t, double x, double cap) {
    Branch br;
    br.from_bus = f;
    br.to_bus = t;
    br.r = 0.0;
    br.x = x;
    br.s_max = cap;
    net.branches.push_back(br);
  };
  link(0, 1, 0.06, 0.0);
  link(0, 3, 0.09, 1.0);
  link(1, 2, 0.08, 0.0);
  link(2, 3, 0.05, 0.35);
  link(3, 4, 0.07, 0.0);
  link(1, 4, 0.12, 0.0);

  auto unit = [&](int bus, double pmax, double c2, double c1) {
    Generator g;
    g.bus = bus;
    g.p_min = 0.0;
    g.p_max = pmax;
    g.q_min = -1.0;
    g.q_max = 1.0;
    g.cost_quadratic = c2;
    g.cost_linear = c1;
    net.generators.push_back(g);
  };
  unit(0, 3.0, 110.0, 14.0);
  unit(1, 1.5, 180.0, 22.0);
  unit(4, 1.0, 95.0, 30.0);
  net.slack_bus = 0;
  net.finalize();
  if (!validate_network(net).empty())
    throw std::logic_error("five_bus_lossless: fixture invalid");
  return net;
}

// independent two-port assembly: ideal transformer with complex ratio
// N = tap e^{j shift} on the from side, composed with the pi section
inline std::array<std::complex<double>, 4> oracle_two_port(double r, double x,
                                                           double b, double tap,
                                                           double shift) {
  using cd = std::complex<double>;
  const cd ys = 1.0 / cd(r, x);
  const cd ych(0.0, b / 2.0);
  const cd y11 = ys + ych, y12 = -ys, y21 = -ys, y22 = ys + ych;
  const cd N = std::polar(tap, shift);
  // v_a = v_n / N and i_n = i_a / conj(N) for a lossless ideal transformer
  return {y11 / (N * std::conj(N)), y12 / std::conj(N), y21 / N, y22};
}

// complex power the line draws at each terminal
inline std::array<std::complex<double>, 2> oracle_terminal_power(
    const Branch& br, double vn, double vm, double thn, double thm) {
  using cd = std::complex<double>;
  const auto Y = oracle_two_port(br.r, br.x, br.b_charging, br.tap, br.shift);
  const cd Vn = std::polar(vn, thn), Vm = std::polar(vm, thm);
  const cd In = Y[0] * Vn + Y[1] * Vm;
  const cd Im = Y[2] * Vn + Y[3] * Vm;
  return {Vn * std::conj(In), Vm * std::conj(Im)};
}

}  // namespace ktopf::testing
