#include "pnr/layer.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "pnr/error.hpp"
#include "pnr/rng.hpp"

namespace pnr {

namespace {

// Solve (P^T W P + lambda I) X = rhs using the same scaled assembly as the
// forward pass, so forward and backward see one consistent system.
Matrix solve_against_normal_matrix(const Matrix& p, const std::vector<double>& w,
                                   double ridge, const Matrix& rhs) {
  // Assembly needs an H argument only for the right-hand side; reuse rhs
  // assembly manually: factor scaled A, then solve A_scaled X = rhs / scale.
  NormalEq eq = assemble_normal_eq(p, Matrix::zeros(p.rows(), 1), w, ridge);
  Cholesky fac = cholesky_factor(eq.a, normal_eq_pivot_tol(eq.a));
  Matrix scaled_rhs(rhs.rows(), rhs.cols());
  for (long long i = 0; i < rhs.size(); ++i) {
    scaled_rhs.data()[i] = rhs.data()[i] / eq.scale;
  }
  return fac.solve(scaled_rhs);
}

}  // namespace

LayerGrads lse_backward(const Matrix& upstream, const Matrix& p, const Matrix& h,
                        const Matrix& f, const std::vector<double>& row_weights,
                        double ridge) {
  const int n = p.rows(), d = p.cols(), dd = h.cols();
  if (upstream.rows() != d || upstream.cols() != dd) {
    throw DimensionError("lse_backward: upstream is " + upstream.shape_str() +
                         ", expected " + f.shape_str());
  }
  const Matrix x = solve_against_normal_matrix(p, row_weights, ridge, upstream);
  const Matrix r = h - matmul(p, f);

  LayerGrads g;
  g.dh = matmul(p, x);                                   // n x D
  g.dp = matmul(r, transpose(x)) - matmul(matmul(p, x), transpose(f));  // n x d
  for (int j = 0; j < n; ++j) {
    const double w = row_weights.empty() ? 1.0 : row_weights[j];
    if (w == 1.0) continue;
    for (int i = 0; i < dd; ++i) g.dh(j, i) *= w;
    for (int k = 0; k < d; ++k) g.dp(j, k) *= w;
  }
  return g;
}

LayerGrads lad_backward_frozen(const Matrix& upstream, const Matrix& p, const Matrix& h,
                               const Matrix& f, const Matrix& final_weights,
                               double ridge) {
  const int n = p.rows(), d = p.cols(), dd = h.cols();
  if (final_weights.rows() != n || final_weights.cols() != dd) {
    throw ContractError("lad_backward_frozen: cached weights are " +
                        final_weights.shape_str() + ", expected " +
                        std::to_string(n) + "x" + std::to_string(dd));
  }
  if (upstream.rows() != d || upstream.cols() != dd) {
    throw DimensionError("lad_backward_frozen: upstream is " + upstream.shape_str() +
                         ", expected " + f.shape_str());
  }

  LayerGrads g;
  g.dh = Matrix(n, dd);
  g.dp = Matrix(n, d);
  const Matrix pf = matmul(p, f);

  std::vector<double> w(n);
  Matrix g_col(d, 1);
  for (int i = 0; i < dd; ++i) {
    for (int j = 0; j < n; ++j) w[j] = final_weights(j, i);
    for (int k = 0; k < d; ++k) g_col(k, 0) = upstream(k, i);
    const Matrix x = solve_against_normal_matrix(p, w, ridge, g_col);  // d x 1
    const Matrix px = matmul(p, x);                                    // n x 1
    for (int j = 0; j < n; ++j) {
      g.dh(j, i) = w[j] * px(j, 0);
      const double r = h(j, i) - pf(j, i);
      for (int k = 0; k < d; ++k) {
        g.dp(j, k) += w[j] * (r * x(k, 0) - px(j, 0) * f(k, i));
      }
    }
  }
  return g;
}

Matrix frozen_weight_map(const Matrix& p, const Matrix& h, const Matrix& final_weights,
                         double ridge) {
  const int n = p.rows(), d = p.cols(), dd = h.cols();
  if (final_weights.rows() != n || final_weights.cols() != dd) {
    throw ContractError("frozen_weight_map: weights are " + final_weights.shape_str() +
                        ", expected " + std::to_string(n) + "x" + std::to_string(dd));
  }
  Matrix f(d, dd);
  std::vector<double> w(n);
  Matrix h_col(n, 1);
  for (int i = 0; i < dd; ++i) {
    for (int j = 0; j < n; ++j) {
      w[j] = final_weights(j, i);
      h_col(j, 0) = h(j, i);
    }
    NormalEq eq = assemble_normal_eq(p, h_col, w, ridge);
    Cholesky fac = cholesky_factor(eq.a, normal_eq_pivot_tol(eq.a));
    Matrix f_col = fac.solve(eq.b);
    for (int k = 0; k < d; ++k) f(k, i) = f_col(k, 0);
  }
  return f;
}

PnrForwardResult pnr_forward(Tape& tape, NodeId h_s, NodeId p_s, NodeId p_t,
                             const PnrConfig& cfg,
                             const std::vector<double>& row_weights) {
  cfg.validate();
  RegressionProblem prob;
  prob.h = tape.value(h_s);
  prob.p = tape.value(p_s);
  prob.row_weights = row_weights;

  RegressionSolution sol = solve(prob, cfg);

  // Shared immutable state for the backward closure.
  struct Cache {
    Matrix p, h, f, final_weights;
    std::vector<double> row_weights;
    double ridge;
    int norm_p;
  };
  auto cache = std::make_shared<Cache>();
  cache->p = prob.p;
  cache->h = prob.h;
  cache->f = sol.f;
  cache->final_weights = sol.final_weights;
  cache->row_weights = row_weights;
  cache->ridge = cfg.ridge;
  cache->norm_p = cfg.p;

  CustomBackward rule = [cache](const Matrix& upstream) {
    LayerGrads g =
        cache->norm_p == 1
            ? lad_backward_frozen(upstream, cache->p, cache->h, cache->f,
                                  cache->final_weights, cache->ridge)
            : lse_backward(upstream, cache->p, cache->h, cache->f,
                           cache->row_weights, cache->ridge);
    std::vector<Matrix> grads;
    grads.push_back(std::move(g.dh));
    grads.push_back(std::move(g.dp));
    return grads;
  };

  PnrForwardResult out;
  out.f = tape.custom(sol.f, {h_s, p_s}, std::move(rule));
  out.h_t = tape.matmul(p_t, out.f);
  return out;
}

// ---- gradient checking ----

GradcheckReport gradcheck(const LossBuilder& f, const std::vector<Matrix>& inputs,
                          double step, double tol) {
  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(xs.size());
    for (const Matrix& x : xs) ids.push_back(tape.input(x));
    NodeId loss = f(tape, ids);
    const Matrix& v = tape.value(loss);
    if (v.rows() != 1 || v.cols() != 1) {
      throw ContractError("gradcheck: loss builder must produce a 1x1 node");
    }
    return v(0, 0);
  };

  // Analytic gradients once.
  Tape tape;
  std::vector<NodeId> ids;
  for (const Matrix& x : inputs) ids.push_back(tape.input(x));
  NodeId loss = f(tape, ids);
  const Matrix& lv = tape.value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("gradcheck: loss builder must produce a 1x1 node");
  }
  std::vector<Matrix> grads = tape.backward(loss);

  GradcheckReport report;
  std::vector<Matrix> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (int r = 0; r < inputs[k].rows(); ++r) {
      for (int c = 0; c < inputs[k].cols(); ++c) {
        const double saved = probe[k](r, c);
        probe[k](r, c) = saved + step;
        const double up = eval(probe);
        probe[k](r, c) = saved - step;
        const double down = eval(probe);
        probe[k](r, c) = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = grads[ids[k]](r, c);
        const double denom =
            std::max(std::max(std::fabs(analytic), std::fabs(numeric)), 1e-8);
        report.max_rel_err =
            std::max(report.max_rel_err, std::fabs(analytic - numeric) / denom);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (long long i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Entries bounded away from zero, for kinked ops (relu, abs).
Matrix random_matrix_offset(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (long long i = 0; i < m.size(); ++i) {
    const double v = rng.uniform(0.3, 1.0);
    m.data()[i] = rng.uniform01() < 0.5 ? -v : v;
  }
  return m;
}

NamedCheck run_named(const std::string& name, const LossBuilder& f,
                     const std::vector<Matrix>& inputs, double tol) {
  GradcheckReport rep = gradcheck(f, inputs, 1e-5, tol);
  return NamedCheck{name, rep.max_rel_err, rep.pass};
}

}  // namespace

std::vector<NamedCheck> run_gradcheck_suite(std::uint64_t seed, int trials, int p,
                                            bool corrupt_backward) {
  std::vector<NamedCheck> out;
  Rng rng(derive_seed(seed, 0x6772616463686b00ULL));

  auto worst_of = [&](const std::string& name, double tol,
                      const std::function<NamedCheck(int)>& one) {
    NamedCheck worst{name, 0.0, true};
    for (int t = 0; t < trials; ++t) {
      NamedCheck c = one(t);
      worst.max_rel_err = std::max(worst.max_rel_err, c.max_rel_err);
      worst.pass = worst.pass && c.pass;
    }
    (void)tol;
    out.push_back(worst);
  };

  // Built-in elementwise / reduction / structural ops.
  worst_of("matmul_chain_quadratic", 1e-6, [&](int) {
    std::vector<Matrix> ins = {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2),
                               random_matrix(rng, 3, 2)};
    return run_named(
        "matmul_chain_quadratic",
        [](Tape& t, const std::vector<NodeId>& ids) {
          NodeId prod = t.matmul(ids[0], ids[1]);
          NodeId diff = t.sub(prod, ids[2]);
          return t.sum(t.mul(diff, diff));
        },
        ins, 1e-6);
  });

  worst_of("elementwise_smooth", 1e-6, [&](int) {
    std::vector<Matrix> ins = {random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)};
    return run_named(
        "elementwise_smooth",
        [](Tape& t, const std::vector<NodeId>& ids) {
          NodeId a = t.tanh(ids[0]);
          NodeId b = t.sigmoid(ids[1]);
          NodeId c = t.softplus(t.mul(a, b));
          NodeId d = t.add(t.scale(c, 0.7), t.sub(a, b));
          return t.mean(d);
        },
        ins, 1e-6);
  });

  worst_of("elementwise_kinked", 1e-6, [&](int) {
    std::vector<Matrix> ins = {random_matrix_offset(rng, 4, 3)};
    return run_named(
        "elementwise_kinked",
        [](Tape& t, const std::vector<NodeId>& ids) {
          return t.sum(t.add(t.relu(ids[0]), t.abs(ids[0])));
        },
        ins, 1e-6);
  });

  worst_of("reshape_hconcat", 1e-6, [&](int) {
    std::vector<Matrix> ins = {random_matrix(rng, 2, 6), random_matrix(rng, 3, 2)};
    return run_named(
        "reshape_hconcat",
        [](Tape& t, const std::vector<NodeId>& ids) {
          NodeId a = t.reshape(ids[0], 3, 4);
          NodeId c = t.hconcat(a, ids[1]);
          return t.sum(t.mul(c, c));
        },
        ins, 1e-6);
  });

  worst_of("custom_identity_node", 1e-10, [&](int) {
    std::vector<Matrix> ins = {random_matrix(rng, 3, 2)};
    return run_named(
        "custom_identity_node",
        [](Tape& t, const std::vector<NodeId>& ids) {
          NodeId node = t.custom(t.value(ids[0]), {ids[0]}, [](const Matrix& up) {
            return std::vector<Matrix>{up};
          });
          return t.sum(t.mul(node, node));
        },
        ins, 1e-10);
  });

  const bool check_p2 = (p == 0 || p == 2);
  const bool check_p1 = (p == 0 || p == 1);

  if (check_p2) {
    worst_of("pnr_lse_sum_ht", 1e-5, [&](int) {
      const int n = 6, d = 2, dd = 3, m = 4;
      std::vector<Matrix> ins = {random_matrix(rng, n, dd), random_matrix(rng, n, d),
                                 random_matrix(rng, m, d)};
      PnrConfig cfg;
      cfg.p = 2;
      cfg.ridge = 1e-9;
      return run_named(
          "pnr_lse_sum_ht",
          [cfg](Tape& t, const std::vector<NodeId>& ids) {
            PnrForwardResult r = pnr_forward(t, ids[0], ids[1], ids[2], cfg);
            return t.sum(r.h_t);
          },
          ins, 1e-5);
    });

    worst_of("pnr_lse_masked_f_loss", 1e-5, [&](int) {
      const int n = 8, d = 2, dd = 2, m = 3;
      std::vector<Matrix> ins = {random_matrix(rng, n, dd), random_matrix(rng, n, d),
                                 random_matrix(rng, m, d)};
      Matrix mask_probe = random_matrix(rng, d, dd);
      std::vector<double> weights(n);
      for (int j = 0; j < n; ++j) weights[j] = (j % 3 == 0) ? 0.0 : 1.0;
      PnrConfig cfg;
      cfg.p = 2;
      cfg.ridge = 1e-9;
      return run_named(
          "pnr_lse_masked_f_loss",
          [cfg, weights, mask_probe](Tape& t, const std::vector<NodeId>& ids) {
            PnrForwardResult r = pnr_forward(t, ids[0], ids[1], ids[2], cfg, weights);
            NodeId probe = t.input(mask_probe);
            return t.sum(t.mul(r.f, probe));
          },
          ins, 1e-5);
    });
  }

  if (check_p1) {
    // Frozen-weight surrogate: analytic gradients from the layer backward,
    // numeric differences of the *frozen* map (weights fixed at the values
    // cached by a base forward).
    worst_of("pnr_lad_frozen_map", 1e-4, [&](int) {
      const int n = 8, d = 2, dd = 2;
      Matrix h = random_matrix(rng, n, dd);
      Matrix pmat = random_matrix(rng, n, d);
      Matrix probe = random_matrix(rng, d, dd);
      PnrConfig cfg;
      cfg.p = 1;
      cfg.irls_iters = 4;
      // A generous weight guard keeps the frozen solve well conditioned;
      // near-interpolated rows at eps = 1e-8 give weights ~1e8 and central
      // differences of the solve lose all significant digits.
      cfg.irls_eps = 1e-3;
      cfg.ridge = 1e-9;
      RegressionProblem prob{h, pmat, {}};
      RegressionSolution sol = solve_lad_irls(prob, cfg);
      const Matrix w = sol.final_weights;
      const double ridge = cfg.ridge;

      auto builder = [w, ridge, probe](Tape& t, const std::vector<NodeId>& ids) {
        const Matrix& hh = t.value(ids[0]);
        const Matrix& pp = t.value(ids[1]);
        Matrix f = frozen_weight_map(pp, hh, w, ridge);
        NodeId f_node = t.custom(f, {ids[0], ids[1]}, [w, ridge, hh, pp, f](const Matrix& up) {
          LayerGrads g = lad_backward_frozen(up, pp, hh, f, w, ridge);
          return std::vector<Matrix>{g.dh, g.dp};
        });
        NodeId probe_node = t.input(probe);
        return t.sum(t.mul(f_node, probe_node));
      };
      GradcheckReport rep = gradcheck(builder, {h, pmat}, 1e-5, 1e-4);
      return NamedCheck{"pnr_lad_frozen_map", rep.max_rel_err, rep.pass};
    });
  }

  if (corrupt_backward) {
    // Negative control: the backward rule scales the true gradient by 1.05,
    // which every check must catch.
    NamedCheck c = run_named(
        "corrupted_backward_control",
        [](Tape& t, const std::vector<NodeId>& ids) {
          NodeId node = t.custom(t.value(ids[0]), {ids[0]}, [](const Matrix& up) {
            return std::vector<Matrix>{1.05 * up};
          });
          return t.sum(t.mul(node, node));
        },
        {random_matrix(rng, 3, 3)}, 1e-6);
    out.push_back(c);
  }

  return out;
}

}  // namespace pnr
