#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pnr/solver.hpp"
#include "pnr/tape.hpp"

namespace pnr {

// Gradients of the closed-form weighted least-squares map
// F = (P^T W P + lambda I)^-1 P^T W H with respect to H and P.
// With S = (P^T W P + lambda I)^-1, X = S G and R = H - P F:
//   dH = W P X
//   dP = W (R X^T - P X F^T)
// lambda follows the forward convention ridge * trace(P^T W P)/d; its own
// dependence on P is ignored (ridge defaults to 1e-9, far below gradient
// check tolerances).
struct LayerGrads {
  Matrix dh;  // n x D
  Matrix dp;  // n x d
};

LayerGrads lse_backward(const Matrix& upstream, const Matrix& p, const Matrix& h,
                        const Matrix& f, const std::vector<double>& row_weights,
                        double ridge);

// The LAD approximation: differentiate the last IRLS update only, with the
// per-column weight matrices held fixed at their final values. This is the
// exact gradient of the frozen-weight surrogate map, not of the full
// iterative process.
LayerGrads lad_backward_frozen(const Matrix& upstream, const Matrix& p, const Matrix& h,
                               const Matrix& f, const Matrix& final_weights,
                               double ridge);

// Evaluate the frozen-weight map itself (weighted LSE per column with fixed
// weights). Used by gradient checks as the surrogate forward.
Matrix frozen_weight_map(const Matrix& p, const Matrix& h, const Matrix& final_weights,
                         double ridge);

struct PnrForwardResult {
  NodeId f;    // d x D node with the custom backward
  NodeId h_t;  // m x D node, standard matmul of p_t and f
};

// Runs the solver on the values of (h_s, p_s), registers F as a custom node
// whose backward is lse_backward (p=2) or lad_backward_frozen (p=1), and
// predicts H_t = P_t F as an ordinary matmul node. row_weights, when given,
// act as constant per-row weights (the unsupervised binary mask).
PnrForwardResult pnr_forward(Tape& tape, NodeId h_s, NodeId p_s, NodeId p_t,
                             const PnrConfig& cfg,
                             const std::vector<double>& row_weights = {});

// ---- gradient checking ----

// Builds a scalar loss node from leaf ids created for `inputs`.
using LossBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

struct GradcheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// Compares tape gradients of f against central finite differences,
// entry by entry, with relative error denominator
// max(|analytic|, |numeric|, 1e-8).
GradcheckReport gradcheck(const LossBuilder& f, const std::vector<Matrix>& inputs,
                          double step = 1e-5, double tol = 1e-6);

struct NamedCheck {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// The full named gradient-check suite: built-in ops, custom nodes, and the
// pNR layer for the requested p (0 = both). corrupt_backward adds a
// negative control whose backward rule is deliberately wrong; it is
// expected to FAIL and makes the suite unsuccessful.
std::vector<NamedCheck> run_gradcheck_suite(std::uint64_t seed, int trials, int p,
                                            bool corrupt_backward);

}  // namespace pnr
