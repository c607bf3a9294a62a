#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ktopf/common.hpp"

namespace ktopf {

/// Convex quadratic program
///   min 1/2 x'Qx + c'x   s.t.  A x = b,  G x <= h
/// assembled row by row. Box bounds are folded into G.
class ConvexProgram {
 public:
  explicit ConvexProgram(int n_vars)
      : n_(n_vars), quad_(static_cast<size_t>(n_vars), 0.0),
        lin_(static_cast<size_t>(n_vars), 0.0),
        names_(static_cast<size_t>(n_vars)) {}

  int n() const { return n_; }
  int n_eq() const { return static_cast<int>(eq_rhs_.size()); }
  int n_ineq() const { return static_cast<int>(ineq_rhs_.size()); }

  void set_name(int var, std::string name) {
    names_[static_cast<size_t>(var)] = std::move(name);
  }
  const std::string& name(int var) const {
    return names_[static_cast<size_t>(var)];
  }

  /// obj += coef * x_var^2
  void add_quadratic_cost(int var, double coef) {
    quad_[static_cast<size_t>(var)] += coef;
  }
  /// obj += coef * x_var
  void add_linear_cost(int var, double coef) {
    lin_[static_cast<size_t>(var)] += coef;
  }

  int add_equality(double rhs) {
    eq_rhs_.push_back(rhs);
    eq_rows_.emplace_back();
    return static_cast<int>(eq_rhs_.size()) - 1;
  }
  void add_eq_term(int row, int var, double coef) {
    eq_rows_[static_cast<size_t>(row)].push_back({var, coef});
  }
  void add_eq_rhs(int row, double delta) {
    eq_rhs_[static_cast<size_t>(row)] += delta;
  }

  /// Row sum(coef * x) <= rhs
  int add_inequality(double rhs) {
    ineq_rhs_.push_back(rhs);
    ineq_rows_.emplace_back();
    return static_cast<int>(ineq_rhs_.size()) - 1;
  }
  void add_ineq_term(int row, int var, double coef) {
    ineq_rows_[static_cast<size_t>(row)].push_back({var, coef});
  }

  /// lo <= x_var <= hi; infinite sides are skipped
  void add_bounds(int var, double lo, double hi) {
    if (hi < kInf) {
      int r = add_inequality(hi);
      add_ineq_term(r, var, 1.0);
    }
    if (lo > -kInf) {
      int r = add_inequality(-lo);
      add_ineq_term(r, var, -1.0);
    }
  }

  Eigen::MatrixXd quadratic_matrix() const {  // the Q in 1/2 x'Qx
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n_, n_);
    for (int i = 0; i < n_; ++i) Q(i, i) = 2.0 * quad_[static_cast<size_t>(i)];
    return Q;
  }
  Eigen::VectorXd quadratic_diagonal() const {  // Q is diagonal by construction
    Eigen::VectorXd q(n_);
    for (int i = 0; i < n_; ++i) q(i) = 2.0 * quad_[static_cast<size_t>(i)];
    return q;
  }
  Eigen::VectorXd linear_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(lin_.data(), n_);
  }
  Eigen::MatrixXd eq_matrix() const { return materialize(eq_rows_); }
  Eigen::VectorXd eq_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(eq_rhs_.data(),
                                             static_cast<long>(eq_rhs_.size()));
  }
  Eigen::MatrixXd ineq_matrix() const { return materialize(ineq_rows_); }
  Eigen::VectorXd ineq_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(
        ineq_rhs_.data(), static_cast<long>(ineq_rhs_.size()));
  }
  Eigen::SparseMatrix<double> eq_sparse() const { return sparsify(eq_rows_); }
  Eigen::SparseMatrix<double> ineq_sparse() const { return sparsify(ineq_rows_); }

  double objective_value(const Eigen::VectorXd& x) const {
    double obj = 0.0;
    for (int i = 0; i < n_; ++i)
      obj += quad_[static_cast<size_t>(i)] * x(i) * x(i) +
             lin_[static_cast<size_t>(i)] * x(i);
    return obj;
  }

  /// Human-readable listing for debugging small models.
  std::string dump() const {
    auto var = [this](int i) {
      const auto& nm = names_[static_cast<size_t>(i)];
      return nm.empty() ? "x" + std::to_string(i) : nm;
    };
    std::string out = "min ";
    bool first = true;
    for (int i = 0; i < n_; ++i) {
      if (quad_[static_cast<size_t>(i)] != 0.0) {
        out += (first ? "" : " + ") + format_double(quad_[static_cast<size_t>(i)]) +
               "*" + var(i) + "^2";
        first = false;
      }
      if (lin_[static_cast<size_t>(i)] != 0.0) {
        out += (first ? "" : " + ") + format_double(lin_[static_cast<size_t>(i)]) +
               "*" + var(i);
        first = false;
      }
    }
    out += "\n";
    for (size_t r = 0; r < eq_rows_.size(); ++r) {
      out += "  ";
      for (size_t t = 0; t < eq_rows_[r].size(); ++t)
        out += (t ? " + " : "") + format_double(eq_rows_[r][t].coef) + "*" +
               var(eq_rows_[r][t].var);
      out += " == " + format_double(eq_rhs_[r]) + "\n";
    }
    for (size_t r = 0; r < ineq_rows_.size(); ++r) {
      out += "  ";
      for (size_t t = 0; t < ineq_rows_[r].size(); ++t)
        out += (t ? " + " : "") + format_double(ineq_rows_[r][t].coef) + "*" +
               var(ineq_rows_[r][t].var);
      out += " <= " + format_double(ineq_rhs_[r]) + "\n";
    }
    return out;
  }

 private:
  struct Term {
    int var;
    double coef;
  };

  Eigen::MatrixXd materialize(const std::vector<std::vector<Term>>& rows) const {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<long>(rows.size()), n_);
    for (size_t r = 0; r < rows.size(); ++r)
      for (const Term& t : rows[r])
        M(static_cast<long>(r), t.var) += t.coef;
    return M;
  }

  Eigen::SparseMatrix<double> sparsify(
      const std::vector<std::vector<Term>>& rows) const {
    std::vector<Eigen::Triplet<double>> trips;
    size_t total = 0;
    for (const auto& row : rows) total += row.size();
    trips.reserve(total);
    for (size_t r = 0; r < rows.size(); ++r)
      for (const Term& t : rows[r])
        trips.emplace_back(static_cast<int>(r), t.var, t.coef);
    Eigen::SparseMatrix<double> M(static_cast<int>(rows.size()), n_);
    M.setFromTriplets(trips.begin(), trips.end());
    return M;
  }

  int n_;
  std::vector<double> quad_, lin_;
  std::vector<std::string> names_;
  std::vector<std::vector<Term>> eq_rows_, ineq_rows_;
  std::vector<double> eq_rhs_, ineq_rhs_;
};

enum class SolveStatus { Optimal, Infeasible, IterLimit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::IterLimit: return "iter_limit";
  }
  return "?";
}

struct QpOptions {
  int max_iterations = 100;
  double tol_feasible = 1e-8;  // absolute nodal residual on Ax=b, Gx<=h
  double tol_gap = 1e-8;       // relative complementarity gap
};

struct QpResult {
  SolveStatus status = SolveStatus::IterLimit;
  Eigen::VectorXd x;
  Eigen::VectorXd eq_dual;    // one multiplier per equality row
  Eigen::VectorXd ineq_dual;  // one multiplier per inequality row, >= 0
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = kInf;
  double gap = kInf;
};

/// Primal-dual interior-point method with predictor-corrector steps.
/// Infeasible start; equality-only problems fall through to a direct KKT
/// solve. Constraint rows carry only a handful of terms each, so the KKT
/// systems are assembled and factorized sparsely.
inline QpResult solve_qp(const ConvexProgram& prog, const QpOptions& opt = {}) {
  const int n = prog.n();
  const int me = prog.n_eq();
  const int mi = prog.n_ineq();
  const int kk = n + me;

  const Eigen::VectorXd qdiag = prog.quadratic_diagonal();
  const Eigen::VectorXd c = prog.linear_vector();
  const Eigen::SparseMatrix<double> A = prog.eq_sparse();
  const Eigen::VectorXd b = prog.eq_vector();
  const Eigen::SparseMatrix<double> G = prog.ineq_sparse();
  const Eigen::VectorXd h = prog.ineq_vector();
  const Eigen::SparseMatrix<double> At = A.transpose();
  const Eigen::SparseMatrix<double> Gt = G.transpose();

  QpResult res;

  auto primal_residual = [&](const Eigen::VectorXd& x) {
    double r = 0.0;
    if (me) r = (A * x - b).cwiseAbs().maxCoeff();
    if (mi) {
      const Eigen::VectorXd viol = G * x - h;
      r = std::max(r, viol.maxCoeff());
    }
    return std::max(r, 0.0);
  };

  // [Q + G' diag(d) G + rtop I, A'; A, -rbot I] from triplets
  auto assemble = [&](const Eigen::ArrayXd& d, double rtop, double rbot) {
    Eigen::SparseMatrix<double> H;
    if (mi) {
      const Eigen::SparseMatrix<double> DG = d.matrix().asDiagonal() * G;
      H = Gt * DG;
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(H.nonZeros() + n + 2 * A.nonZeros() + me));
    for (int o = 0; o < H.outerSize(); ++o)
      for (Eigen::SparseMatrix<double>::InnerIterator it(H, o); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, qdiag(i) + rtop);
    for (int o = 0; o < A.outerSize(); ++o)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A, o); it; ++it) {
        trips.emplace_back(n + static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()),
                           n + static_cast<int>(it.row()), it.value());
      }
    for (int i = 0; i < me; ++i) trips.emplace_back(n + i, n + i, -rbot);
    Eigen::SparseMatrix<double> K(kk, kk);
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
  };

  // the KKT pattern is fixed for a given program, so the fill-reducing
  // analysis runs once and only the numeric factorization repeats
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool analyzed = false;
  auto factorize = [&](const Eigen::SparseMatrix<double>& K) {
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    ldlt.factorize(K);
    return ldlt.info() == Eigen::Success;
  };

  if (mi == 0) {
    // pure equality QP: one saddle-point solve
    Eigen::VectorXd rhs(kk);
    rhs.head(n) = -c;
    if (me) rhs.tail(me) = b;
    Eigen::VectorXd sol = Eigen::VectorXd::Constant(kk, std::nan(""));
    if (factorize(assemble(Eigen::ArrayXd(), 1e-12, 1e-12)))
      sol = ldlt.solve(rhs);
    res.x = sol.head(n);
    res.eq_dual = me ? Eigen::VectorXd(sol.tail(me)) : Eigen::VectorXd(0);
    res.ineq_dual = Eigen::VectorXd(0);
    res.objective = prog.objective_value(res.x);
    res.primal_residual = primal_residual(res.x);
    res.gap = 0.0;
    res.status = res.x.allFinite() && res.primal_residual < opt.tol_feasible
                     ? SolveStatus::Optimal
                     : SolveStatus::Infeasible;
    return res;
  }

  // starting point: equality-weighted least squares pulled toward Gx <= h
  Eigen::VectorXd x(n), y = Eigen::VectorXd::Zero(me);
  {
    Eigen::VectorXd rhs0(kk);
    rhs0.head(n) = -c + Gt * h;
    if (me) rhs0.tail(me) = b;
    Eigen::VectorXd sol = Eigen::VectorXd::Constant(kk, std::nan(""));
    if (factorize(assemble(Eigen::ArrayXd::Ones(mi), 1e-8, 1e-10)))
      sol = ldlt.solve(rhs0);
    if (sol.allFinite()) {
      x = sol.head(n);
      if (me) y = sol.tail(me);
    } else {
      x.setZero();
    }
  }
  Eigen::VectorXd s = (h - G * x).cwiseMax(1.0);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(mi);

  Eigen::VectorXd rhs(kk), dx(n), dy(me), ds(mi), dz(mi);

  double best_pres = kInf;
  std::vector<double> pres_history;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    const Eigen::VectorXd rd =
        qdiag.cwiseProduct(x) + c +
        (me ? Eigen::VectorXd(At * y) : Eigen::VectorXd::Zero(n)) + Gt * z;
    const Eigen::VectorXd rp = me ? Eigen::VectorXd(A * x - b) : Eigen::VectorXd(0);
    const Eigen::VectorXd rg = G * x + s - h;
    const double mu = s.dot(z) / mi;

    res.x = x;
    res.eq_dual = y;
    res.ineq_dual = z;
    res.objective = prog.objective_value(x);
    res.primal_residual = primal_residual(x);
    res.gap = s.dot(z) / std::max(1.0, std::abs(res.objective));
    res.iterations = it - 1;

    const double dres = rd.cwiseAbs().maxCoeff();
    if (res.primal_residual < opt.tol_feasible && res.gap < opt.tol_gap &&
        dres < 1e-6 * std::max(1.0, z.cwiseAbs().maxCoeff())) {
      res.status = SolveStatus::Optimal;
      return res;
    }

    const double pres_scaled =
        res.primal_residual / std::max(1.0, x.cwiseAbs().maxCoeff());
    pres_history.push_back(pres_scaled);
    best_pres = std::min(best_pres, pres_scaled);
    const bool stalled =
        pres_history.size() > 10 &&
        pres_scaled > 0.9 * pres_history[pres_history.size() - 11];
    if (pres_scaled > 1e-6 &&
        (mu < 1e-10 || z.cwiseAbs().maxCoeff() > 1e12 ||
         (stalled && mu < 1e-8 && it > 30))) {
      res.status = SolveStatus::Infeasible;
      return res;
    }

    // reduced KKT, shared by predictor and corrector
    const Eigen::ArrayXd d = z.array() / s.array();
    double reg = 1e-11;
    bool factorized = false;
    for (int attempt = 0; attempt < 4; ++attempt) {
      if (factorize(assemble(d, reg, reg))) {
        Eigen::VectorXd probe = ldlt.solve(Eigen::VectorXd::Ones(kk));
        if (probe.allFinite()) {
          factorized = true;
          break;
        }
      }
      reg *= 1e3;
    }
    if (!factorized) {
      res.status = SolveStatus::IterLimit;
      return res;
    }

    auto kkt_solve = [&](const Eigen::VectorXd& rsz) {
      // rsz is the target residual of S z: solve for dx,dy then recover ds,dz
      rhs.head(n) =
          -rd -
          Gt * ((z.array() * rg.array() - rsz.array()) / s.array()).matrix();
      if (me) rhs.tail(me) = -rp;
      Eigen::VectorXd sol = ldlt.solve(rhs);
      dx = sol.head(n);
      if (me) dy = sol.tail(me);
      ds = -rg - G * dx;
      dz = ((-rsz.array() - z.array() * ds.array()) / s.array()).matrix();
    };

    auto max_step = [](const Eigen::VectorXd& w, const Eigen::VectorXd& dw) {
      double a = 1.0;
      for (long i = 0; i < w.size(); ++i)
        if (dw(i) < 0.0) a = std::min(a, -w(i) / dw(i));
      return a;
    };

    // predictor
    kkt_solve(s.cwiseProduct(z));
    const double ap_aff = max_step(s, ds);
    const double ad_aff = max_step(z, dz);
    const double mu_aff =
        (s + ap_aff * ds).dot(z + ad_aff * dz) / mi;
    double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3);
    sigma = std::clamp(sigma, 1e-8, 1.0);

    // corrector
    const Eigen::VectorXd rsz =
        (s.array() * z.array() + ds.array() * dz.array() - sigma * mu).matrix();
    kkt_solve(rsz);
    if (!dx.allFinite() || !ds.allFinite() || !dz.allFinite()) {
      res.status = SolveStatus::IterLimit;
      return res;
    }

    const double alpha =
        0.99 * std::min({max_step(s, ds), max_step(z, dz), 1.0 / 0.99});
    x += alpha * dx;
    if (me) y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
    res.iterations = it;
  }

  res.x = x;
  res.eq_dual = y;
  res.ineq_dual = z;
  res.objective = prog.objective_value(x);
  res.primal_residual = primal_residual(x);
  res.gap = s.dot(z) / std::max(1.0, std::abs(res.objective));
  res.status = SolveStatus::IterLimit;
  return res;
}

/// Supporting half-planes of the disc p^2 + q^2 <= radius^2, evaluated at m
/// equally spaced normals. The cut polygon is inscribed, so it never admits a
/// point outside the disc.
struct PolygonCut {
  double coef_p, coef_q, rhs;
};

inline std::vector<PolygonCut> polygonize_circle(double radius, int segments) {
  std::vector<PolygonCut> cuts;
  cuts.reserve(static_cast<size_t>(segments));
  const double shrink = std::cos(M_PI / segments);
  for (int k = 0; k < segments; ++k) {
    const double phi = 2.0 * M_PI * k / segments;
    cuts.push_back({std::cos(phi), std::sin(phi), radius * shrink});
  }
  return cuts;
}

}  // namespace ktopf
