#pragma once

#include <cstdint>
#include <vector>

#include "pnr/matrix.hpp"
#include "pnr/rng.hpp"

namespace pnr {

// Solver knobs. p selects the residual norm: 2 gives the closed-form
// least-squares solve, 1 gives least absolute deviations via IRLS.
struct PnrConfig {
  int p = 2;
  int irls_iters = 5;      // fixed iteration budget
  double irls_eps = 1e-8;  // guard for 1/|residual| weights
  double ridge = 1e-9;     // relative to trace(P^T W P)/d; 0 disables
  int d = 20;              // pose-feature width
  int feat_dim = 256;      // appearance-feature width (D)

  void validate() const;  // throws ContractError on bad fields
};

// One regression instance: observations H (n x D), design P (n x d),
// optional non-negative per-row weights (masks and IRLS reuse this slot).
struct RegressionProblem {
  Matrix h;
  Matrix p;
  std::vector<double> row_weights;  // empty = all ones

  int n_rows() const { return h.rows(); }
  void check() const;  // shape / weight validity
};

struct RegressionSolution {
  Matrix f;                // d x D estimate
  double objective = 0.0;  // achieved weighted p-norm objective (entrywise sum)
  int iterations_used = 0;
  Matrix final_weights;  // n x D, LAD only: per-column IRLS weights at the last solve
};

// Current IRLS iterate and the per-column weights derived from it.
struct IrlsState {
  Matrix f;        // d x D
  Matrix weights;  // n x D, column i weights the rows of column i's solve
};

// Scaled normal equations (P^T W P + lambda I) F = P^T W H. Entries are
// assembled with pairwise summation and divided by a power-of-two scale so
// that solutions are invariant under duplicated-shot stacking and under
// power-of-two rescaling of the problem.
struct NormalEq {
  Matrix a;       // scaled P^T W P with ridge added on the diagonal
  Matrix b;       // scaled P^T W H
  double lambda;  // ridge actually added to a's diagonal (post-scale)
  double scale;   // power of two divided out of both sides
};

NormalEq assemble_normal_eq(const Matrix& p, const Matrix& h,
                            const std::vector<double>& row_weights, double ridge);

// Relative pivot threshold used when factoring assembled normal equations;
// rank-deficient systems then fail cleanly instead of returning garbage.
double normal_eq_pivot_tol(const Matrix& a);

// Closed-form weighted least squares (p = 2). Minimizes
// sum_j w_j ||H^j - P^j F||^2 + lambda ||F||^2 with
// lambda = ridge * trace(P^T W P)/d; the reported objective is the
// unregularized weighted squared error.
RegressionSolution solve_lse(const RegressionProblem& prob, const PnrConfig& cfg);

// Least absolute deviations via iteratively reweighted least squares.
// Starts from the LSE solution and performs cfg.irls_iters updates with
// per-column diagonal weights w_j = row_weight_j / max(|r_j|, irls_eps).
RegressionSolution solve_lad_irls(const RegressionProblem& prob, const PnrConfig& cfg);

// Dispatch on cfg.p.
RegressionSolution solve(const RegressionProblem& prob, const PnrConfig& cfg);

// Independent LAD reference: solves each column's L1 problem exactly as a
// linear program (simplex with Bland's rule). Test support; limited to
// n <= 64, d <= 8.
RegressionSolution lad_oracle(const RegressionProblem& prob);

// Bernoulli(keep_prob) row mask.
std::vector<std::uint8_t> sample_mask(int n, double keep_prob, Rng& rng);

// Binary re-weighted solve: rows with mask 0 contribute nothing. Equivalent
// to (and implemented as) row_weights = mask.
RegressionSolution solve_masked(const RegressionProblem& prob,
                                const std::vector<std::uint8_t>& mask,
                                const PnrConfig& cfg);

struct Shot {
  Matrix h;  // n x D
  Matrix p;  // n x d
};

// Vertical concatenation of M shots into one larger problem, row order
// following shot order.
RegressionProblem stack_shots(const std::vector<Shot>& shots);

// H_t = P_t F.
Matrix predict_target(const Matrix& f, const Matrix& p_t);

// Weighted entrywise p-norm objective of F on the problem: sum of
// w_j |r_ji| for p = 1, sum of w_j r_ji^2 for p = 2.
double objective(const RegressionProblem& prob, const Matrix& f, int p);

}  // namespace pnr
