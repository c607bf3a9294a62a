#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ktopf/common.hpp"
#include "ktopf/netmodel.hpp"

namespace ktopf {

struct CaseParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct MatrixRow {
  int line = 0;  // 1-based source line of the row start
  std::vector<double> values;
};

struct RawCase {
  std::string name;
  double base_mva = 0.0;
  bool has_base = false;
  std::map<std::string, std::vector<MatrixRow>> matrices;
};

inline std::string strip_comment(const std::string& line) {
  auto pos = line.find('%');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline void parse_row_numbers(const std::string& text, int line_no,
                              std::vector<MatrixRow>& out) {
  std::string cur;
  std::vector<double> vals;
  auto flush_tok = [&]() {
    if (cur.empty()) return;
    try {
      vals.push_back(parse_double(cur));
    } catch (const std::exception&) {
      throw CaseParseError("line " + std::to_string(line_no) +
                           ": expected a number, got '" + cur + "'");
    }
    cur.clear();
  };
  for (char c : text) {
    if (c == ';') {
      flush_tok();
      if (!vals.empty()) out.push_back({line_no, vals});
      vals.clear();
    } else if (c == ',' || c == ' ' || c == '\t' || c == '\r') {
      flush_tok();
    } else {
      cur += c;
    }
  }
  flush_tok();
  if (!vals.empty()) out.push_back({line_no, vals});
}

inline RawCase read_raw_case(std::istream& in, const std::string& origin) {
  RawCase rc;
  std::string line;
  int line_no = 0;
  std::string active;  // matrix currently being filled, empty if none

  while (std::getline(in, line)) {
    ++line_no;
    std::string body = trim(strip_comment(line));
    if (body.empty()) continue;

    if (!active.empty()) {
      auto close = body.find(']');
      std::string row_part = close == std::string::npos ? body : body.substr(0, close);
      parse_row_numbers(row_part, line_no, rc.matrices[active]);
      if (close != std::string::npos) active.clear();
      continue;
    }

    if (body.rfind("function", 0) == 0) {
      auto eq = body.find('=');
      if (eq != std::string::npos) rc.name = std::string(trim(body.substr(eq + 1)));
      continue;
    }
    if (body.rfind("mpc.", 0) != 0) {
      throw CaseParseError(origin + ":" + std::to_string(line_no) +
                           ": unrecognized statement '" + body + "'");
    }
    auto eq = body.find('=');
    if (eq == std::string::npos)
      throw CaseParseError(origin + ":" + std::to_string(line_no) +
                           ": expected '=' after field name");
    std::string field(trim(body.substr(4, eq - 4)));
    std::string rhs(trim(body.substr(eq + 1)));

    if (field == "version") continue;  // string literal, not needed
    if (field == "baseMVA") {
      while (!rhs.empty() && rhs.back() == ';') rhs.pop_back();
      try {
        rc.base_mva = parse_double(std::string(trim(rhs)));
      } catch (const std::exception&) {
        throw CaseParseError(origin + ":" + std::to_string(line_no) +
                             ": baseMVA is not a number");
      }
      rc.has_base = true;
      continue;
    }
    if (rhs.empty() || rhs[0] != '[')
      throw CaseParseError(origin + ":" + std::to_string(line_no) + ": field '" +
                           field + "' must be a matrix");
    std::string rest(trim(rhs.substr(1)));
    rc.matrices[field];  // create even if empty
    auto close = rest.find(']');
    if (close != std::string::npos) {
      parse_row_numbers(rest.substr(0, close), line_no, rc.matrices[field]);
    } else {
      if (!rest.empty()) parse_row_numbers(rest, line_no, rc.matrices[field]);
      active = field;
    }
  }
  if (!active.empty())
    throw CaseParseError(origin + ": matrix '" + active + "' is never closed");
  return rc;
}

inline double col(const MatrixRow& row, size_t idx, const std::string& what,
                  const std::string& origin) {
  if (idx >= row.values.size())
    throw CaseParseError(origin + ":" + std::to_string(row.line) + ": " + what +
                         " row has only " + std::to_string(row.values.size()) +
                         " column(s), need at least " + std::to_string(idx + 1));
  return row.values[idx];
}

}  // namespace detail

/// Parses the standard text case format covering bus/gen/branch/gencost
/// tables. Quantities are converted to per-unit on the case power base and
/// out-of-service rows are dropped.
inline Network parse_matpower(std::istream& in, const std::string& origin = "<case>") {
  using detail::col;
  detail::RawCase rc = detail::read_raw_case(in, origin);

  if (!rc.has_base) throw CaseParseError(origin + ": missing baseMVA");
  if (rc.base_mva <= 0.0) throw CaseParseError(origin + ": baseMVA must be positive");
  for (const char* req : {"bus", "gen", "branch", "gencost"})
    if (rc.matrices.find(req) == rc.matrices.end() || rc.matrices[req].empty())
      throw CaseParseError(origin + ": missing table '" + std::string(req) + "'");

  const double base = rc.base_mva;
  Network net;
  net.base_mva = base;

  std::map<int, int> bus_index;  // original id -> internal
  int slack_count = 0;
  for (const auto& row : rc.matrices["bus"]) {
    Bus b;
    double idv = col(row, 0, "bus", origin);
    b.id = static_cast<int>(idv);
    if (static_cast<double>(b.id) != idv || b.id <= 0)
      throw CaseParseError(origin + ":" + std::to_string(row.line) +
                           ": bus id must be a positive integer");
    if (bus_index.count(b.id))
      throw CaseParseError(origin + ":" + std::to_string(row.line) +
                           ": duplicate bus id " + std::to_string(b.id));
    const int type = static_cast<int>(col(row, 1, "bus", origin));
    if (type < 1 || type > 4)
      throw CaseParseError(origin + ":" + std::to_string(row.line) +
                           ": bus type must be 1..4");
    if (type == 4)
      throw CaseParseError(origin + ":" + std::to_string(row.line) +
                           ": isolated buses (type 4) are not supported");
    b.p_demand = col(row, 2, "bus", origin) / base;
    b.q_demand = col(row, 3, "bus", origin) / base;
    b.g_shunt = col(row, 4, "bus", origin) / base;
    b.b_shunt = col(row, 5, "bus", origin) / base;
    b.v_max = col(row, 11, "bus", origin);
    b.v_min = col(row, 12, "bus", origin);
    bus_index[b.id] = static_cast<int>(net.buses.size());
    if (type == 3) {
      net.slack_bus = static_cast<int>(net.buses.size());
      ++slack_count;
    }
    net.buses.push_back(b);
    net.bus_ids.push_back(b.id);
  }
  if (slack_count != 1)
    throw CaseParseError(origin + ": expected exactly one slack bus (type 3), found " +
                         std::to_string(slack_count));

  auto lookup_bus = [&](double idv, int line) {
    const int id = static_cast<int>(idv);
    auto it = bus_index.find(id);
    if (it == bus_index.end())
      throw CaseParseError(origin + ":" + std::to_string(line) +
                           ": reference to unknown bus " + std::to_string(id));
    return it->second;
  };

  const auto& gen_rows = rc.matrices["gen"];
  const auto& cost_rows = rc.matrices["gencost"];
  if (cost_rows.size() != gen_rows.size())
    throw CaseParseError(origin + ": gencost has " + std::to_string(cost_rows.size()) +
                         " row(s) but gen has " + std::to_string(gen_rows.size()));
  for (size_t i = 0; i < gen_rows.size(); ++i) {
    const auto& row = gen_rows[i];
    const int status = static_cast<int>(col(row, 7, "gen", origin));
    if (status <= 0) continue;
    Generator g;
    g.bus = lookup_bus(col(row, 0, "gen", origin), row.line);
    g.p_initial = col(row, 1, "gen", origin) / base;
    g.q_max = col(row, 3, "gen", origin) / base;
    g.q_min = col(row, 4, "gen", origin) / base;
    g.v_setpoint = col(row, 5, "gen", origin);
    g.p_max = col(row, 8, "gen", origin) / base;
    g.p_min = col(row, 9, "gen", origin) / base;

    const auto& crow = cost_rows[i];
    const int model = static_cast<int>(col(crow, 0, "gencost", origin));
    if (model != 2)
      throw CaseParseError(origin + ":" + std::to_string(crow.line) +
                           ": only polynomial cost (model 2) is supported");
    const int ncost = static_cast<int>(col(crow, 3, "gencost", origin));
    if (ncost < 1 || ncost > 3)
      throw CaseParseError(origin + ":" + std::to_string(crow.line) +
                           ": polynomial cost must have 1..3 coefficients");
    // coefficients are listed highest degree first
    double c2 = 0, c1 = 0, c0 = 0;
    if (ncost == 3) {
      c2 = col(crow, 4, "gencost", origin);
      c1 = col(crow, 5, "gencost", origin);
      c0 = col(crow, 6, "gencost", origin);
    } else if (ncost == 2) {
      c1 = col(crow, 4, "gencost", origin);
      c0 = col(crow, 5, "gencost", origin);
    } else {
      c0 = col(crow, 4, "gencost", origin);
    }
    g.cost_quadratic = c2 * base * base;
    g.cost_linear = c1 * base;
    g.cost_constant = c0;
    net.generators.push_back(g);
  }

  for (const auto& row : rc.matrices["branch"]) {
    const int status = static_cast<int>(col(row, 10, "branch", origin));
    if (status <= 0) continue;
    Branch br;
    br.from_bus = lookup_bus(col(row, 0, "branch", origin), row.line);
    br.to_bus = lookup_bus(col(row, 1, "branch", origin), row.line);
    br.r = col(row, 2, "branch", origin);
    br.x = col(row, 3, "branch", origin);
    br.b_charging = col(row, 4, "branch", origin);
    br.s_max = col(row, 5, "branch", origin) / base;  // rateA; 0 stays 0 = unlimited
    const double ratio = col(row, 8, "branch", origin);
    br.tap = ratio == 0.0 ? 1.0 : ratio;
    br.shift = col(row, 9, "branch", origin) * M_PI / 180.0;
    if (br.x == 0.0)
      throw CaseParseError(origin + ":" + std::to_string(row.line) +
                           ": branch with zero reactance");
    if (br.tap < 0.0)
      throw CaseParseError(origin + ":" + std::to_string(row.line) +
                           ": negative tap ratio");
    net.branches.push_back(br);
  }

  net.finalize();
  auto diags = validate_network(net);
  if (!diags.empty()) {
    std::string msg = origin + ": invalid network:";
    for (const auto& d : diags) msg += "\n  " + d;
    throw CaseParseError(msg);
  }
  return net;
}

inline Network load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CaseParseError("cannot open case file '" + path + "'");
  return parse_matpower(in, path);
}

}  // namespace ktopf
