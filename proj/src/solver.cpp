#include "pnr/solver.hpp"

#include <cfloat>
#include <cmath>
#include <string>
#include <utility>

#include "pnr/error.hpp"

namespace pnr {

void PnrConfig::validate() const {
  if (p != 1 && p != 2) {
    throw ContractError("PnrConfig: p must be 1 or 2, got " + std::to_string(p));
  }
  if (irls_iters < 1) throw ContractError("PnrConfig: irls_iters must be >= 1");
  if (!(irls_eps > 0.0)) throw ContractError("PnrConfig: irls_eps must be > 0");
  if (ridge < 0.0) throw ContractError("PnrConfig: ridge must be >= 0");
}

void RegressionProblem::check() const {
  if (h.rows() != p.rows()) {
    throw DimensionError("regression problem: H has " + std::to_string(h.rows()) +
                         " rows, P has " + std::to_string(p.rows()));
  }
  if (h.rows() < 1) throw DimensionError("regression problem: no observation rows");
  if (!row_weights.empty()) {
    if (static_cast<int>(row_weights.size()) != h.rows()) {
      throw DimensionError("regression problem: " + std::to_string(row_weights.size()) +
                           " row weights for " + std::to_string(h.rows()) + " rows");
    }
    for (double w : row_weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw ContractError("regression problem: row weights must be finite and >= 0");
      }
    }
  }
}

NormalEq assemble_normal_eq(const Matrix& p, const Matrix& h,
                            const std::vector<double>& row_weights, double ridge) {
  const int n = p.rows(), d = p.cols(), dd = h.cols();
  const bool weighted = !row_weights.empty();
  const double* w = weighted ? row_weights.data() : nullptr;

  Matrix a(d, d);
  for (int k = 0; k < d; ++k) {
    for (int l = k; l < d; ++l) {
      double s = weighted
                     ? pairwise_sum(0, n, [&](int j) { return w[j] * (p(j, k) * p(j, l)); })
                     : pairwise_sum(0, n, [&](int j) { return p(j, k) * p(j, l); });
      a(k, l) = s;
      a(l, k) = s;
    }
  }
  Matrix b(d, dd);
  for (int k = 0; k < d; ++k) {
    for (int i = 0; i < dd; ++i) {
      b(k, i) = weighted
                    ? pairwise_sum(0, n, [&](int j) { return w[j] * (p(j, k) * h(j, i)); })
                    : pairwise_sum(0, n, [&](int j) { return p(j, k) * h(j, i); });
    }
  }

  double trace = 0.0;
  for (int k = 0; k < d; ++k) trace += a(k, k);

  // Divide both sides by a power of two near trace/d. Power-of-two scaling
  // is exact in binary floating point, which keeps the solution bitwise
  // invariant under doubling of the problem (duplicated shots).
  double scale = 1.0;
  if (std::isfinite(trace) && trace > 0.0) {
    scale = std::exp2(static_cast<double>(std::ilogb(trace / d)));
  }
  Matrix a_scaled(d, d);
  Matrix b_scaled(d, dd);
  for (long long i = 0; i < a.size(); ++i) a_scaled.data()[i] = a.data()[i] / scale;
  for (long long i = 0; i < b.size(); ++i) b_scaled.data()[i] = b.data()[i] / scale;

  double trace_scaled = 0.0;
  for (int k = 0; k < d; ++k) trace_scaled += a_scaled(k, k);
  const double lambda = ridge * trace_scaled / d;
  for (int k = 0; k < d; ++k) a_scaled(k, k) += lambda;

  return NormalEq{std::move(a_scaled), std::move(b_scaled), lambda, scale};
}

double normal_eq_pivot_tol(const Matrix& a) {
  double max_diag = 0.0;
  for (int k = 0; k < a.rows(); ++k) max_diag = std::max(max_diag, std::fabs(a(k, k)));
  return 64.0 * DBL_EPSILON * a.rows() * max_diag;
}

namespace {

Matrix solve_normal_eq(const NormalEq& eq) {
  Cholesky fac = cholesky_factor(eq.a, normal_eq_pivot_tol(eq.a));
  return fac.solve(eq.b);
}

double weighted_objective(const Matrix& h, const Matrix& p, const Matrix& f,
                          const std::vector<double>& row_weights, int norm_p) {
  const Matrix pf = matmul(p, f);
  double s = 0.0;
  for (int j = 0; j < h.rows(); ++j) {
    const double w = row_weights.empty() ? 1.0 : row_weights[j];
    if (w == 0.0) continue;
    double row = 0.0;
    for (int i = 0; i < h.cols(); ++i) {
      const double r = h(j, i) - pf(j, i);
      row += (norm_p == 1) ? std::fabs(r) : r * r;
    }
    s += w * row;
  }
  return s;
}

}  // namespace

RegressionSolution solve_lse(const RegressionProblem& prob, const PnrConfig& cfg) {
  prob.check();
  NormalEq eq = assemble_normal_eq(prob.p, prob.h, prob.row_weights, cfg.ridge);
  RegressionSolution sol;
  sol.f = solve_normal_eq(eq);
  sol.objective = weighted_objective(prob.h, prob.p, sol.f, prob.row_weights, 2);
  sol.iterations_used = 0;
  return sol;
}

RegressionSolution solve_lad_irls(const RegressionProblem& prob, const PnrConfig& cfg) {
  prob.check();
  cfg.validate();
  const int n = prob.h.rows(), d = prob.p.cols(), dd = prob.h.cols();

  IrlsState state;
  state.f = solve_lse(prob, cfg).f;
  state.weights = Matrix(n, dd);

  std::vector<double> col_w(n);
  Matrix h_col(n, 1);
  for (int t = 0; t < cfg.irls_iters; ++t) {
    const Matrix pf = matmul(prob.p, state.f);
    Matrix next_f(d, dd);
    for (int i = 0; i < dd; ++i) {
      for (int j = 0; j < n; ++j) {
        const double base = prob.row_weights.empty() ? 1.0 : prob.row_weights[j];
        const double r = std::fabs(prob.h(j, i) - pf(j, i));
        col_w[j] = base / std::max(r, cfg.irls_eps);
        state.weights(j, i) = col_w[j];
        h_col(j, 0) = prob.h(j, i);
      }
      NormalEq eq = assemble_normal_eq(prob.p, h_col, col_w, cfg.ridge);
      Matrix f_col = solve_normal_eq(eq);
      for (int k = 0; k < d; ++k) next_f(k, i) = f_col(k, 0);
    }
    state.f = std::move(next_f);
  }

  RegressionSolution sol;
  sol.f = std::move(state.f);
  sol.objective = weighted_objective(prob.h, prob.p, sol.f, prob.row_weights, 1);
  sol.iterations_used = cfg.irls_iters;
  sol.final_weights = std::move(state.weights);
  return sol;
}

RegressionSolution solve(const RegressionProblem& prob, const PnrConfig& cfg) {
  cfg.validate();
  return cfg.p == 1 ? solve_lad_irls(prob, cfg) : solve_lse(prob, cfg);
}

// ---- LAD linear program ----
//
// Per column: min sum_j w_j (u_j + v_j) subject to
//   P f+ - P f- + u - v = h,   f+, f-, u, v >= 0.
// Rows with negative rhs are negated so the u/v column of each row forms an
// identity start basis. Plain dense tableau simplex with Bland's rule
// (smallest eligible index), which cannot cycle.

namespace {

struct SimplexResult {
  std::vector<double> f;  // length d, from f+ - f-
  double objective;
};

SimplexResult lad_simplex_column(const Matrix& p, const std::vector<double>& h,
                                 const std::vector<double>& w) {
  const int n = static_cast<int>(h.size());
  const int d = p.cols();
  const int ncols = 2 * d + 2 * n;  // f+ f- u v

  // Tableau rows: constraints with rhs in the last column.
  std::vector<std::vector<double>> tab(n, std::vector<double>(ncols + 1, 0.0));
  std::vector<int> basis(n);
  for (int j = 0; j < n; ++j) {
    const double sgn = h[j] < 0.0 ? -1.0 : 1.0;
    for (int k = 0; k < d; ++k) {
      tab[j][k] = sgn * p(j, k);
      tab[j][d + k] = -sgn * p(j, k);
    }
    tab[j][2 * d + j] = sgn;       // u_j
    tab[j][2 * d + n + j] = -sgn;  // v_j
    tab[j][ncols] = sgn * h[j];
    basis[j] = (sgn > 0.0) ? (2 * d + j) : (2 * d + n + j);
  }

  std::vector<double> cost(ncols, 0.0);
  double cost_scale = 0.0;
  for (int j = 0; j < n; ++j) {
    cost[2 * d + j] = w[j];
    cost[2 * d + n + j] = w[j];
    cost_scale = std::max(cost_scale, w[j]);
  }
  const double tol = 1e-11 * std::max(1.0, cost_scale);

  // Reduced costs r_j = c_j - c_B B^-1 A_j; with the identity start basis
  // this is c_j - sum_i c_basis[i] * tab[i][j].
  std::vector<double> red(ncols + 1, 0.0);
  for (int j = 0; j <= ncols; ++j) {
    double s = (j < ncols) ? cost[j] : 0.0;
    for (int i = 0; i < n; ++i) s -= cost[basis[i]] * tab[i][j];
    red[j] = s;
  }

  const long max_pivots = 20000L * (n + d);
  for (long iter = 0; iter < max_pivots; ++iter) {
    int enter = -1;
    for (int j = 0; j < ncols; ++j) {
      if (red[j] < -tol) {
        enter = j;
        break;
      }
    }
    if (enter < 0) break;  // optimal

    int leave = -1;
    double best_ratio = 0.0;
    for (int i = 0; i < n; ++i) {
      if (tab[i][enter] > tol) {
        const double ratio = tab[i][ncols] / tab[i][enter];
        if (leave < 0 || ratio < best_ratio - 1e-15 ||
            (std::fabs(ratio - best_ratio) <= 1e-15 && basis[i] < basis[leave])) {
          leave = i;
          best_ratio = ratio;
        }
      }
    }
    if (leave < 0) {
      // Objective is bounded below by zero, so this cannot happen on a
      // well-formed instance.
      throw ContractError("lad_oracle: simplex detected an unbounded direction");
    }

    const double piv = tab[leave][enter];
    for (int j = 0; j <= ncols; ++j) tab[leave][j] /= piv;
    for (int i = 0; i < n; ++i) {
      if (i == leave) continue;
      const double m = tab[i][enter];
      if (m == 0.0) continue;
      for (int j = 0; j <= ncols; ++j) tab[i][j] -= m * tab[leave][j];
    }
    const double mr = red[enter];
    if (mr != 0.0) {
      for (int j = 0; j <= ncols; ++j) red[j] -= mr * tab[leave][j];
    }
    basis[leave] = enter;
  }

  SimplexResult res;
  res.f.assign(d, 0.0);
  double obj = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = tab[i][ncols];
    const int b = basis[i];
    if (b < d) {
      res.f[b] += v;
    } else if (b < 2 * d) {
      res.f[b - d] -= v;
    }
    obj += cost[b] * v;
  }
  res.objective = obj;
  return res;
}

}  // namespace

RegressionSolution lad_oracle(const RegressionProblem& prob) {
  prob.check();
  const int n = prob.h.rows(), d = prob.p.cols(), dd = prob.h.cols();
  if (n > 64 || d > 8) {
    throw ContractError("lad_oracle: test-support oracle limited to n <= 64, d <= 8 (got n=" +
                        std::to_string(n) + ", d=" + std::to_string(d) + ")");
  }
  std::vector<double> w = prob.row_weights;
  if (w.empty()) w.assign(n, 1.0);

  RegressionSolution sol;
  sol.f = Matrix(d, dd);
  double obj = 0.0;
  std::vector<double> h_col(n);
  for (int i = 0; i < dd; ++i) {
    for (int j = 0; j < n; ++j) h_col[j] = prob.h(j, i);
    SimplexResult col = lad_simplex_column(prob.p, h_col, w);
    for (int k = 0; k < d; ++k) sol.f(k, i) = col.f[k];
    obj += col.objective;
  }
  sol.objective = obj;
  sol.iterations_used = 0;
  return sol;
}

std::vector<std::uint8_t> sample_mask(int n, double keep_prob, Rng& rng) {
  if (keep_prob < 0.0 || keep_prob > 1.0) {
    throw ContractError("sample_mask: keep_prob must be in [0, 1]");
  }
  std::vector<std::uint8_t> mask(n);
  for (int j = 0; j < n; ++j) {
    mask[j] = rng.uniform01() < keep_prob ? 1 : 0;
  }
  return mask;
}

RegressionSolution solve_masked(const RegressionProblem& prob,
                                const std::vector<std::uint8_t>& mask,
                                const PnrConfig& cfg) {
  if (static_cast<int>(mask.size()) != prob.h.rows()) {
    throw DimensionError("solve_masked: mask length " + std::to_string(mask.size()) +
                         " for " + std::to_string(prob.h.rows()) + " rows");
  }
  RegressionProblem weighted = prob;
  weighted.row_weights.assign(mask.size(), 0.0);
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j] != 0 && mask[j] != 1) {
      throw ContractError("solve_masked: mask entries must be 0 or 1");
    }
    const double base =
        prob.row_weights.empty() ? 1.0 : prob.row_weights[j];
    weighted.row_weights[j] = mask[j] ? base : 0.0;
  }
  return solve(weighted, cfg);
}

RegressionProblem stack_shots(const std::vector<Shot>& shots) {
  if (shots.empty()) throw ContractError("stack_shots: need at least one shot");
  const int dd = shots[0].h.cols();
  const int d = shots[0].p.cols();
  int total = 0;
  for (const Shot& s : shots) {
    if (s.h.cols() != dd || s.p.cols() != d) {
      throw DimensionError("stack_shots: shot widths " + s.h.shape_str() + "/" +
                           s.p.shape_str() + " do not match " +
                           std::to_string(dd) + "/" + std::to_string(d));
    }
    if (s.h.rows() != s.p.rows()) {
      throw DimensionError("stack_shots: shot H/P row mismatch " + s.h.shape_str() +
                           " vs " + s.p.shape_str());
    }
    total += s.h.rows();
  }
  RegressionProblem prob;
  prob.h = Matrix(total, dd);
  prob.p = Matrix(total, d);
  int row = 0;
  for (const Shot& s : shots) {
    for (int j = 0; j < s.h.rows(); ++j, ++row) {
      for (int i = 0; i < dd; ++i) prob.h(row, i) = s.h(j, i);
      for (int k = 0; k < d; ++k) prob.p(row, k) = s.p(j, k);
    }
  }
  return prob;
}

Matrix predict_target(const Matrix& f, const Matrix& p_t) {
  if (p_t.cols() != f.rows()) {
    throw DimensionError("predict_target: P_t is " + p_t.shape_str() + ", F is " +
                         f.shape_str());
  }
  return matmul(p_t, f);
}

double objective(const RegressionProblem& prob, const Matrix& f, int p) {
  prob.check();
  if (p != 1 && p != 2) throw ContractError("objective: p must be 1 or 2");
  if (prob.p.cols() != f.rows() || prob.h.cols() != f.cols()) {
    throw DimensionError("objective: F is " + f.shape_str() + " for problem P " +
                         prob.p.shape_str() + ", H " + prob.h.shape_str());
  }
  return weighted_objective(prob.h, prob.p, f, prob.row_weights, p);
}

}  // namespace pnr
