// Acceptance suite: one line per criterion, nonzero exit if any fails.
//
// Criterion 4's no-outlier control is known to fail at the default solver
// configuration; the FAIL line carries the measured win-rate curve. See the
// README's "Known red acceptance check" note.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pnr/config.hpp"
#include "pnr/error.hpp"
#include "pnr/layer.hpp"
#include "pnr/matrix.hpp"
#include "pnr/metrics.hpp"
#include "pnr/model.hpp"
#include "pnr/rng.hpp"
#include "pnr/solver.hpp"
#include "pnr/synth.hpp"

using namespace pnr;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void criterion(int number, const std::string& description, bool pass,
               const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", number,
              description.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Matrix random_matrix(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (long long i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// 1. Normal-equations residual at reference scale.
void criterion_1() {
  const auto start = std::chrono::steady_clock::now();
  bool all_ok = true;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Rng rng(derive_seed(101, t));
    RegressionProblem prob;
    prob.p = random_matrix(rng, 512, 20);
    prob.h = random_matrix(rng, 512, 64);
    PnrConfig cfg;
    cfg.p = 2;
    cfg.ridge = 0.0;
    RegressionSolution sol = solve_lse(prob, cfg);
    const Matrix pt = transpose(prob.p);
    const double residual = max_abs(matmul(pt, prob.h - matmul(prob.p, sol.f)));
    const double bound = 1e-8 * (1.0 + max_abs(matmul(pt, prob.h)));
    worst = std::max(worst, residual / bound);
    all_ok = all_ok && residual <= bound;
  }
  const double elapsed = seconds_since(start);
  criterion(1, "normal-equations residual, 100 problems n=512 d=20 D=64",
            all_ok && elapsed < 5.0,
            "worst residual/bound " + fmt(worst) + ", " + fmt(elapsed) + " s");
}

// 2. Exact recovery of noiseless consistent instances, both norms.
void criterion_2() {
  bool all_ok = true;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    SynthSpec spec;
    spec.n = 40;
    spec.d = 5;
    spec.feat_dim = 4;
    spec.noise_sigma = 0.0;
    spec.outlier_frac = 0.0;
    spec.seed = derive_seed(102, t);
    SynthInstance inst = gen_regression_instance(spec);
    for (int p : {1, 2}) {
      PnrConfig cfg;
      cfg.p = p;
      cfg.irls_iters = 5;
      cfg.ridge = 0.0;
      RegressionSolution sol = solve(inst.problem, cfg);
      const double rel = fro_norm(sol.f - inst.f_star) / fro_norm(inst.f_star);
      worst = std::max(worst, rel);
      all_ok = all_ok && rel <= 1e-8;
    }
  }
  criterion(2, "exact recovery of noiseless consistent instances (p=1 and p=2)",
            all_ok, "worst relative error " + fmt(worst));
}

// 3. IRLS against its LSE initializer and the LP oracle.
void criterion_3() {
  const auto start = std::chrono::steady_clock::now();
  bool non_degradation = true;
  bool oracle_agreement = true;
  double worst_gap = 0.0;
  for (int t = 0; t < 50; ++t) {
    SynthSpec spec;  // n=32, d=4, D=3 defaults
    spec.seed = derive_seed(103, t);
    SynthInstance inst = gen_regression_instance(spec);
    PnrConfig cfg;
    cfg.p = 1;
    cfg.irls_iters = 30;
    cfg.ridge = 1e-9;
    RegressionSolution lse = solve_lse(inst.problem, cfg);
    RegressionSolution irls = solve_lad_irls(inst.problem, cfg);
    const double lse_l1 = objective(inst.problem, lse.f, 1);
    non_degradation = non_degradation && irls.objective <= lse_l1 + 1e-9;
    RegressionSolution lp = lad_oracle(inst.problem);
    const double gap = (irls.objective - lp.objective) / lp.objective;
    worst_gap = std::max(worst_gap, std::fabs(gap));
    oracle_agreement = oracle_agreement && std::fabs(gap) <= 0.01;
  }
  const double elapsed = seconds_since(start);
  criterion(3, "IRLS non-degradation + LP-oracle agreement on 50 instances",
            non_degradation && oracle_agreement && elapsed < 30.0,
            "worst oracle gap " + fmt(worst_gap * 100) + "%, " + fmt(elapsed) + " s");
}

// 4. Robustness Monte-Carlo, with and without outliers.
double lad_vs_lse_win_rate(double frac, int iters, int trials) {
  int wins = 0;
  for (int t = 0; t < trials; ++t) {
    SynthSpec spec;
    spec.outlier_frac = frac;
    spec.seed = derive_seed(104, t);
    SynthInstance inst = gen_regression_instance(spec);
    PnrConfig lse_cfg;
    lse_cfg.p = 2;
    lse_cfg.ridge = 1e-9;
    PnrConfig lad_cfg;
    lad_cfg.p = 1;
    lad_cfg.irls_iters = iters;
    lad_cfg.ridge = 1e-9;
    const double lse_err =
        recovery_error(solve_lse(inst.problem, lse_cfg).f, inst.f_star);
    const double lad_err =
        recovery_error(solve_lad_irls(inst.problem, lad_cfg).f, inst.f_star);
    if (lad_err < lse_err) ++wins;
  }
  return static_cast<double>(wins) / trials;
}

void criterion_4_robust() {
  const double with_outliers = lad_vs_lse_win_rate(0.2, 5, 100);
  criterion(4, "robustness: LAD beats LSE with 20% outliers at 10x",
            with_outliers >= 0.90, "win rate " + fmt(with_outliers));
}

void criterion_4_control() {
  const double control = lad_vs_lse_win_rate(0.0, 5, 100);
  const bool in_window = control >= 0.35 && control <= 0.65;
  std::string detail = "win rate " + fmt(control) + " at the default 5 IRLS iters";
  if (!in_window) {
    detail += "; documented spec defect: converged LAD is less efficient than LSE "
              "under pure gaussian noise (win rate " +
              fmt(lad_vs_lse_win_rate(0.0, 1, 100)) + " at 1 iter, " +
              fmt(lad_vs_lse_win_rate(0.0, 10, 100)) + " at 10)";
  }
  criterion(4, "robustness control: no-outlier win rate in [0.35, 0.65]", in_window,
            detail);
}

// 5. Gradient fidelity of the differentiable layer.
void criterion_5() {
  Rng rng(derive_seed(105, 0));
  bool p2_ok = true;
  double p2_worst = 0.0;
  PnrConfig cfg2;
  cfg2.p = 2;
  cfg2.ridge = 1e-9;
  for (int t = 0; t < 20; ++t) {
    const int n = 6 + rng.uniform_int(11);
    const int d = 1 + rng.uniform_int(4);
    const int dd = 1 + rng.uniform_int(4);
    const int m = 1 + rng.uniform_int(4);
    Matrix h = random_matrix(rng, n, dd);
    Matrix p = random_matrix(rng, n, d);
    Matrix pt = random_matrix(rng, m, d);
    GradcheckReport rep = gradcheck(
        [&](Tape& tape, const std::vector<NodeId>& ids) {
          PnrForwardResult r = pnr_forward(tape, ids[0], ids[1], ids[2], cfg2);
          return tape.sum(r.h_t);
        },
        {h, p, pt}, 1e-5, 1e-5);
    p2_worst = std::max(p2_worst, rep.max_rel_err);
    p2_ok = p2_ok && rep.pass;
  }
  criterion(5, "p=2 pNR gradcheck over 20 seeded instances", p2_ok,
            "worst max_rel_err " + fmt(p2_worst));

  bool p1_ok = true;
  double p1_worst = 0.0;
  for (int t = 0; t < 8; ++t) {
    const int n = 8, d = 2, dd = 2;
    Matrix h = random_matrix(rng, n, dd);
    Matrix p = random_matrix(rng, n, d);
    Matrix probe = random_matrix(rng, d, dd);
    PnrConfig cfg1;
    cfg1.p = 1;
    cfg1.irls_iters = 4;
    cfg1.irls_eps = 1e-3;  // keeps the frozen-map FD oracle well conditioned
    cfg1.ridge = 1e-9;
    RegressionProblem prob{h, p, {}};
    const Matrix w = solve_lad_irls(prob, cfg1).final_weights;
    GradcheckReport rep = gradcheck(
        [&](Tape& tape, const std::vector<NodeId>& ids) {
          const Matrix hh = tape.value(ids[0]);
          const Matrix pp = tape.value(ids[1]);
          Matrix f = frozen_weight_map(pp, hh, w, cfg1.ridge);
          NodeId f_node =
              tape.custom(f, {ids[0], ids[1]}, [&, hh, pp, f](const Matrix& up) {
                LayerGrads g = lad_backward_frozen(up, pp, hh, f, w, cfg1.ridge);
                return std::vector<Matrix>{g.dh, g.dp};
              });
          return tape.sum(tape.mul(f_node, tape.input(probe)));
        },
        {h, p}, 1e-5, 1e-4);
    p1_worst = std::max(p1_worst, rep.max_rel_err);
    p1_ok = p1_ok && rep.pass;
  }
  criterion(5, "p=1 frozen-weight backward vs frozen-map oracle", p1_ok,
            "worst max_rel_err " + fmt(p1_worst));

  GradcheckReport corrupted = gradcheck(
      [](Tape& tape, const std::vector<NodeId>& ids) {
        NodeId node = tape.custom(tape.value(ids[0]), {ids[0]}, [](const Matrix& up) {
          return std::vector<Matrix>{1.05 * up};
        });
        return tape.sum(tape.mul(node, node));
      },
      {random_matrix(rng, 3, 3)}, 1e-5, 1e-6);
  criterion(5, "negative control: corrupted backward fails gradcheck",
            !corrupted.pass, "max_rel_err " + fmt(corrupted.max_rel_err));
}

// 6. Masking identities.
void criterion_6() {
  Rng rng(derive_seed(106, 0));
  bool bitwise_ok = true;
  for (int t = 0; t < 5; ++t) {
    RegressionProblem prob;
    prob.p = random_matrix(rng, 12, 3);
    prob.h = random_matrix(rng, 12, 2);
    std::vector<std::uint8_t> ones_mask(12, 1);
    for (int p : {1, 2}) {
      PnrConfig cfg;
      cfg.p = p;
      cfg.irls_iters = 5;
      cfg.ridge = 1e-9;
      RegressionSolution masked = solve_masked(prob, ones_mask, cfg);
      RegressionSolution plain = solve(prob, cfg);
      bitwise_ok = bitwise_ok && masked.f == plain.f &&
                   masked.objective == plain.objective;
    }
  }
  criterion(6, "all-ones mask is bitwise identical to the unmasked solve", bitwise_ok,
            "p=1 and p=2, 5 instances");

  bool recovery_ok = true;
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    Rng inst_rng(derive_seed(106, 100 + t));
    RegressionProblem prob;
    prob.p = random_matrix(inst_rng, 10, 3);
    Matrix f_star = random_matrix(inst_rng, 3, 2);
    prob.h = matmul(prob.p, f_star);
    std::vector<std::uint8_t> mask(10, 1);
    for (int k = 0; k < 3; ++k) {
      const int row = inst_rng.uniform_int(10);
      mask[row] = 0;
      for (int i = 0; i < 2; ++i) prob.h(row, i) += inst_rng.uniform(5.0, 50.0);
    }
    PnrConfig cfg;
    cfg.p = 2;
    cfg.ridge = 0.0;
    RegressionSolution sol = solve_masked(prob, mask, cfg);
    const double rel = fro_norm(sol.f - f_star) / fro_norm(f_star);
    worst = std::max(worst, rel);
    recovery_ok = recovery_ok && rel <= 1e-8;
  }
  criterion(6, "masking exactly the corrupted rows recovers F*", recovery_ok,
            "worst relative error " + fmt(worst));
}

// 7. Multi-shot algebra.
void criterion_7() {
  Rng rng(derive_seed(107, 0));
  bool summed_ok = true;
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    std::vector<Shot> shots;
    for (int s = 0; s < 3; ++s) {
      shots.push_back(Shot{random_matrix(rng, 9, 3), random_matrix(rng, 9, 2)});
    }
    PnrConfig cfg;
    cfg.p = 2;
    cfg.ridge = 0.0;
    Matrix stacked = solve_lse(stack_shots(shots), cfg).f;
    Matrix a = Matrix::zeros(2, 2);
    Matrix b = Matrix::zeros(2, 3);
    for (const Shot& s : shots) {
      a = a + matmul(transpose(s.p), s.p);
      b = b + matmul(transpose(s.p), s.h);
    }
    Matrix summed = cholesky_solve_spd(a, b);
    const double rel = fro_norm(stacked - summed) / (1.0 + fro_norm(summed));
    worst = std::max(worst, rel);
    summed_ok = summed_ok && rel <= 1e-9;
  }
  criterion(7, "stacked solve equals summed normal equations", summed_ok,
            "worst relative difference " + fmt(worst));

  bool dup_ok = true;
  for (int t = 0; t < 10; ++t) {
    Shot shot{random_matrix(rng, 8, 3), random_matrix(rng, 8, 2)};
    PnrConfig cfg;
    cfg.p = 2;
    cfg.ridge = (t % 2 == 0) ? 0.0 : 1e-9;
    Matrix one = solve_lse(stack_shots({shot}), cfg).f;
    Matrix two = solve_lse(stack_shots({shot, shot}), cfg).f;
    dup_ok = dup_ok && one == two;
  }
  criterion(7, "duplicated-shot invariance holds exactly for p=2", dup_ok,
            "bitwise equality, 10 instances");
}

// 8/9/10. Toy training runs and the multi-shot evaluation trend.
void criteria_8_9_10() {
  // supervised pure-L1 (criterion 8)
  TrainConfig sup;
  sup.mode = TrainMode::kSupervised;
  sup.lambda3 = 0.0;
  sup.lambda4 = 0.0;
  sup.steps = 300;
  sup.seed = 42;
  const auto start = std::chrono::steady_clock::now();
  ToyDataset ds = gen_toy_dataset(sup.identities, sup.samples_per_id, sup.seed);
  Trainer trainer(sup);
  TrainResult run = train_loop(trainer, ds);
  const double elapsed = seconds_since(start);
  const bool halved = run.final_holdout_l1 <= 0.5 * run.initial_holdout_l1;

  // determinism: a second run must reproduce the trajectory bitwise
  Trainer trainer2(sup);
  TrainResult run2 = train_loop(trainer2, ds);
  bool deterministic = run.final_holdout_l1 == run2.final_holdout_l1 &&
                       run.log.size() == run2.log.size();
  for (std::size_t s = 0; deterministic && s < run.log.size(); ++s) {
    deterministic = run.log[s].total == run2.log[s].total;
  }
  criterion(8, "supervised 300-step toy training halves held-out L1",
            halved && deterministic && elapsed < 120.0,
            "L1 " + fmt(run.initial_holdout_l1) + " -> " + fmt(run.final_holdout_l1) +
                ", deterministic, " + fmt(elapsed) + " s");

  // full four-loss config stays finite for 100 steps (criterion 8b)
  TrainConfig full;
  full.steps = 100;
  full.seed = 42;
  ToyDataset ds_full = gen_toy_dataset(full.identities, full.samples_per_id, full.seed);
  Trainer full_trainer(full);
  bool finite_ok = true;
  try {
    TrainResult full_run = train_loop(full_trainer, ds_full);
    for (const StepLosses& l : full_run.log) {
      finite_ok = finite_ok && std::isfinite(l.total) && std::isfinite(l.d_i) &&
                  std::isfinite(l.d_k) && !l.skipped;
    }
  } catch (const Error& e) {
    finite_ok = false;
  }
  criterion(8, "full four-loss config completes 100 steps with finite components",
            finite_ok, "lambda = (5, 5, 10, 10)");

  // unsupervised (criterion 9)
  TrainConfig unsup;
  unsup.mode = TrainMode::kUnsupervised;
  unsup.lambda3 = 0.0;
  unsup.steps = 300;
  unsup.seed = 42;
  ToyDataset ds_u = gen_toy_dataset(unsup.identities, unsup.samples_per_id, unsup.seed);
  Trainer unsup_trainer(unsup);
  TrainResult unsup_run = train_loop(unsup_trainer, ds_u);
  criterion(9, "unsupervised 300-step training reaches 60% of initial L1",
            unsup_run.final_holdout_l1 <= 0.6 * unsup_run.initial_holdout_l1,
            "self-reconstruction L1 " + fmt(unsup_run.initial_holdout_l1) + " -> " +
                fmt(unsup_run.final_holdout_l1));

  // multi-shot trend on the trained supervised checkpoint (criterion 10)
  EvalReport report = evaluate_checkpoint(trainer.params(), ds.test, sup, {1, 3, 5});
  double m1 = 0, m3 = 0, m5 = 0;
  for (const EvalPerShot& p : report.per_m) {
    if (p.m == 1) m1 = p.median_ssim;
    if (p.m == 3) m3 = p.median_ssim;
    if (p.m == 5) m5 = p.median_ssim;
  }
  criterion(10, "median SSIM non-decreasing in M on the noisy toy test set",
            m5 >= m3 && m3 >= m1,
            "M=1: " + fmt(m1) + ", M=3: " + fmt(m3) + ", M=5: " + fmt(m5));
}

// 11. SSIM unit behavior.
void criterion_11() {
  Rng rng(derive_seed(111, 0));
  ImageShape shape;
  bool ok = true;
  for (int t = 0; t < 5; ++t) {
    Matrix a(shape.height, shape.width * shape.channels);
    Matrix b(shape.height, shape.width * shape.channels);
    for (long long i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.uniform01();
      b.data()[i] = rng.uniform01();
    }
    ok = ok && ssim(a, a, shape) == 1.0;
    ok = ok && ssim(a, b, shape) == ssim(b, a, shape);
  }
  SsimParams params;
  Matrix ca = Matrix::full(shape.height, shape.width * shape.channels, 0.2);
  Matrix cb = Matrix::full(shape.height, shape.width * shape.channels, 0.8);
  const double c1 = params.c1();
  const double direct = (2.0 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
  const double measured = ssim(ca, cb, shape, params);
  ok = ok && std::fabs(measured - direct) <= 1e-12;
  criterion(11, "SSIM identity, symmetry, and the two-constant analytic case", ok,
            "constant-image SSIM " + fmt(measured));
}

// 12. CLI reproducibility: bit-identical artifacts across reruns.
void criterion_12() {
  const fs::path dir = fs::temp_directory_path() /
                       ("pnr_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto path = [&](const std::string& child) { return (dir / child).string(); };
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(PNR_CLI_PATH) + " " + args + " > " +
                            path("cli_out.txt") + " 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  auto bytes = [&](const std::string& child) {
    std::ifstream f(path(child), std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
  };

  {
    std::ofstream cfg(path("cfg.txt"));
    cfg << "mode = supervised\nsteps = 20\nbatch = 2\nlambda3 = 0\nlambda4 = 0\n"
        << "identities = 4\nsamples_per_id = 3\nseed = 33\n";
  }
  Rng rng(derive_seed(112, 0));
  save_matrix(path("H.pnrm"), random_matrix(rng, 8, 3));
  save_matrix(path("P.pnrm"), random_matrix(rng, 8, 2));

  bool ok = true;
  ok = ok && run("solve --p 1 --iters 9 --H " + path("H.pnrm") + " --P " +
                 path("P.pnrm") + " --out " + path("F1.pnrm")) == 0;
  ok = ok && run("solve --p 1 --iters 9 --H " + path("H.pnrm") + " --P " +
                 path("P.pnrm") + " --out " + path("F2.pnrm")) == 0;
  ok = ok && bytes("F1.pnrm") == bytes("F2.pnrm");

  ok = ok && run("synth --identities 2 --samples-per-id 2 --seed 17 --out " +
                 path("data1")) == 0;
  ok = ok && run("synth --identities 2 --samples-per-id 2 --seed 17 --out " +
                 path("data2")) == 0;
  ok = ok && bytes("data1/manifest.txt") == bytes("data2/manifest.txt");
  ok = ok && bytes("data1/train_0_src_img.pnrm") == bytes("data2/train_0_src_img.pnrm");

  ok = ok && run("train --config " + path("cfg.txt") + " --out " + path("runA")) == 0;
  ok = ok && run("train --config " + path("cfg.txt") + " --out " + path("runB")) == 0;
  ok = ok && bytes("runA/checkpoint.pnrc") == bytes("runB/checkpoint.pnrc");
  ok = ok && bytes("runA/loss_log.csv") == bytes("runB/loss_log.csv");

  criterion(12, "CLI reruns produce bit-identical artifacts", ok,
            "solve, synth, train (run manifest excluded: carries timestamps)");
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  // --criterion4-control runs only the no-outlier control, which fails at
  // the default configuration (documented spec defect; registered in ctest
  // as an expected failure). --core runs everything else. No argument runs
  // the complete faithful suite.
  const std::string mode = argc > 1 ? argv[1] : "";
  if (mode == "--criterion4-control") {
    criterion_4_control();
    std::printf("%d criterion check(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
  }

  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4_robust();
  if (mode != "--core") {
    criterion_4_control();
  } else {
    std::printf("[----] criterion  4: no-outlier control runs separately "
                "(acceptance_criterion4_control, expected to fail)\n");
  }
  criterion_5();
  criterion_6();
  criterion_7();
  criteria_8_9_10();
  criterion_11();
  criterion_12();
  std::printf("%d criterion check(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
