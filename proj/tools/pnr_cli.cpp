// pnr: experiment driver for the p-norm regression toy pipeline.
//
// Verbs: gradcheck, solve, bench-robust, synth, train, eval.
// Exit codes: 0 ok, 1 check failure, 2 I/O, 3 dimension, 4 singularity,
// 5 config validation, 6 training divergence.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pnr/config.hpp"
#include "pnr/error.hpp"
#include "pnr/layer.hpp"
#include "pnr/matrix.hpp"
#include "pnr/metrics.hpp"
#include "pnr/model.hpp"
#include "pnr/solver.hpp"
#include "pnr/synth.hpp"

namespace {

std::uint64_t env_seed_override(std::uint64_t fallback) {
  const char* env = std::getenv("PNR_SEED");
  if (env == nullptr || *env == '\0') return fallback;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw pnr::ConfigError("PNR_SEED is not a valid integer: " + std::string(env));
  }
}

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

int cmd_gradcheck(std::uint64_t seed, int trials, int p, bool corrupt) {
  std::vector<pnr::NamedCheck> checks =
      pnr::run_gradcheck_suite(env_seed_override(seed), trials, p, corrupt);
  bool all_pass = true;
  for (const pnr::NamedCheck& c : checks) {
    std::printf("%-28s %.3e %s\n", c.name.c_str(), c.max_rel_err,
                c.pass ? "PASS" : "FAIL");
    all_pass = all_pass && c.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_solve(int p, const std::string& h_path, const std::string& p_path,
              const std::string& out_path, int iters, double eps, double ridge) {
  pnr::RegressionProblem prob;
  prob.h = pnr::load_matrix(h_path);
  prob.p = pnr::load_matrix(p_path);
  pnr::PnrConfig cfg;
  cfg.p = p;
  cfg.irls_iters = iters;
  cfg.irls_eps = eps;
  cfg.ridge = ridge;
  pnr::RegressionSolution sol = pnr::solve(prob, cfg);
  pnr::save_matrix(out_path, sol.f);
  std::printf("objective = %.17g\n", sol.objective);
  std::printf("iterations_used = %d\n", sol.iterations_used);
  return 0;
}

int cmd_bench_robust(int trials, pnr::SynthSpec spec, int irls_iters) {
  spec.seed = env_seed_override(spec.seed);
  pnr::PnrConfig lse_cfg;
  lse_cfg.p = 2;
  pnr::PnrConfig lad_cfg;
  lad_cfg.p = 1;
  lad_cfg.irls_iters = irls_iters;

  int lad_wins = 0;
  double lse_total = 0.0, lad_total = 0.0;
  std::printf("trial  lse_err      lad_err      winner\n");
  for (int t = 0; t < trials; ++t) {
    pnr::SynthSpec trial_spec = spec;
    trial_spec.seed = pnr::derive_seed(spec.seed, static_cast<std::uint64_t>(t));
    pnr::SynthInstance inst = pnr::gen_regression_instance(trial_spec);
    const double lse_err =
        pnr::recovery_error(pnr::solve_lse(inst.problem, lse_cfg).f, inst.f_star);
    const double lad_err =
        pnr::recovery_error(pnr::solve_lad_irls(inst.problem, lad_cfg).f, inst.f_star);
    const bool lad_won = lad_err < lse_err;
    lad_wins += lad_won ? 1 : 0;
    lse_total += lse_err;
    lad_total += lad_err;
    std::printf("%5d  %.5e  %.5e  %s\n", t, lse_err, lad_err, lad_won ? "LAD" : "LSE");
  }
  std::printf("mean_lse_err = %.6e\n", lse_total / trials);
  std::printf("mean_lad_err = %.6e\n", lad_total / trials);
  std::printf("lad_win_rate = %.4f (%d/%d)\n",
              static_cast<double>(lad_wins) / trials, lad_wins, trials);
  return 0;
}

int cmd_synth(const std::string& out_dir, int identities, int samples_per_id,
              std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  pnr::ToyDataset ds =
      pnr::gen_toy_dataset(identities, samples_per_id, env_seed_override(seed));
  pnr::save_toy_dataset(out_dir, ds);
  std::printf("wrote %zu train and %zu test samples to %s\n", ds.train.size(),
              ds.test.size(), out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  pnr::TrainConfig cfg = pnr::parse_config_file(config_path);
  cfg.seed = env_seed_override(cfg.seed);
  cfg.validate();

  std::filesystem::create_directories(out_dir);
  const std::string start_time = timestamp_now();

  pnr::ToyDataset ds =
      pnr::gen_toy_dataset(cfg.identities, cfg.samples_per_id, cfg.seed);
  pnr::Trainer trainer(cfg);
  pnr::TrainResult result = pnr::train_loop(trainer, ds);

  const std::string ckpt_path = out_dir + "/checkpoint.pnrc";
  pnr::save_checkpoint(ckpt_path, trainer.params(), trainer.gen_opt(),
                       trainer.disc_i_opt(), trainer.disc_k_opt());

  const std::string log_path = out_dir + "/loss_log.csv";
  {
    std::ofstream log(log_path);
    if (!log) throw pnr::IoError("cannot open for writing: " + log_path);
    log << "step,l1,per,gan_i,gan_k\n";
    log.precision(17);
    for (std::size_t s = 0; s < result.log.size(); ++s) {
      const pnr::StepLosses& l = result.log[s];
      log << s << "," << l.l1 << "," << l.per << "," << l.gan_i << "," << l.gan_k
          << "\n";
    }
    if (!log) throw pnr::IoError("loss log write failed");
  }

  const std::string manifest_path = out_dir + "/manifest.txt";
  {
    std::ofstream manifest(manifest_path);
    if (!manifest) throw pnr::IoError("cannot open for writing: " + manifest_path);
    manifest << "# run manifest\n";
    manifest << "start_time = " << start_time << "\n";
    manifest << "end_time = " << timestamp_now() << "\n";
    manifest << "seed = " << cfg.seed << "\n";
    manifest << "artifact = checkpoint.pnrc\n";
    manifest << "artifact = loss_log.csv\n";
    manifest << "initial_holdout_l1 = " << result.initial_holdout_l1 << "\n";
    manifest << "final_holdout_l1 = " << result.final_holdout_l1 << "\n";
    manifest << "skipped_steps = " << result.skipped << "\n";
    manifest << "# config snapshot\n";
    manifest << pnr::config_to_text(cfg);
    if (!manifest) throw pnr::IoError("manifest write failed");
  }

  std::printf("initial_holdout_l1 = %.6f\n", result.initial_holdout_l1);
  std::printf("final_holdout_l1 = %.6f\n", result.final_holdout_l1);
  std::printf("skipped_steps = %d\n", result.skipped);
  std::printf("checkpoint = %s\n", ckpt_path.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
             const std::string& data_dir, const std::vector<int>& ms) {
  pnr::TrainConfig cfg = pnr::parse_config_file(config_path);
  cfg.seed = env_seed_override(cfg.seed);
  cfg.validate();

  pnr::Checkpoint ckpt =
      pnr::load_checkpoint(checkpoint_path, pnr::ModelDims::from_config(cfg));

  pnr::ToyDataset ds;
  if (data_dir.empty()) {
    ds = pnr::gen_toy_dataset(cfg.identities, cfg.samples_per_id, cfg.seed);
  } else {
    ds = pnr::load_toy_dataset(data_dir);
  }
  const std::vector<pnr::ToySample>& test = ds.test.empty() ? ds.train : ds.test;

  pnr::EvalReport report = pnr::evaluate_checkpoint(ckpt.params, test, cfg, ms);
  std::fputs(report.to_text().c_str(), stdout);
  std::fputs(report.to_key_values().c_str(), stdout);
  return 0;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const pnr::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const pnr::DimensionError& e) {
    std::fprintf(stderr, "dimension error: %s\n", e.what());
    return 3;
  } catch (const pnr::SingularityError& e) {
    std::fprintf(stderr, "singularity error: %s\n", e.what());
    return 4;
  } catch (const pnr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 5;
  } catch (const pnr::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 6;
  } catch (const pnr::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"p-norm regression toy pipeline"};
  app.require_subcommand(1);

  auto* gradcheck = app.add_subcommand("gradcheck", "run the gradient-check suite");
  std::uint64_t gc_seed = 7;
  int gc_trials = 3;
  int gc_p = 0;
  bool gc_corrupt = false;
  gradcheck->add_option("--seed", gc_seed, "PRNG seed");
  gradcheck->add_option("--trials", gc_trials, "instances per check");
  gradcheck->add_option("--p", gc_p, "norm to check: 1, 2, or 0 for both")
      ->check(CLI::IsMember({0, 1, 2}));
  gradcheck->add_flag("--corrupt-backward", gc_corrupt)->group("");

  auto* solve = app.add_subcommand("solve", "solve one regression problem from files");
  int sv_p = 2;
  std::string sv_h, sv_p_path, sv_out;
  int sv_iters = 5;
  double sv_eps = 1e-8, sv_ridge = 1e-9;
  solve->add_option("--p", sv_p, "norm: 1 or 2")->check(CLI::IsMember({1, 2}));
  solve->add_option("--H", sv_h, "observations H (PNRM)")->required();
  solve->add_option("--P", sv_p_path, "design P (PNRM)")->required();
  solve->add_option("--out", sv_out, "output F (PNRM)")->required();
  solve->add_option("--iters", sv_iters, "IRLS iterations (p=1)");
  solve->add_option("--eps", sv_eps, "IRLS weight guard");
  solve->add_option("--ridge", sv_ridge, "relative ridge strength");

  auto* bench = app.add_subcommand("bench-robust",
                                   "Monte-Carlo LSE vs LAD recovery comparison");
  int br_trials = 100;
  int br_iters = 10;
  pnr::SynthSpec br_spec;
  bench->add_option("--trials", br_trials, "number of trials");
  bench->add_option("--n", br_spec.n, "rows per instance");
  bench->add_option("--d", br_spec.d, "design width");
  bench->add_option("--D", br_spec.feat_dim, "observation width");
  bench->add_option("--noise", br_spec.noise_sigma, "gaussian noise sigma");
  bench->add_option("--outlier-frac", br_spec.outlier_frac, "fraction of outlier rows");
  bench->add_option("--outlier-scale", br_spec.outlier_scale, "outlier amplitude");
  bench->add_option("--seed", br_spec.seed, "PRNG seed");
  bench->add_option("--iters", br_iters, "IRLS iterations");

  auto* synth = app.add_subcommand("synth", "write a toy dataset directory");
  std::string sy_out;
  int sy_identities = 8, sy_samples = 6;
  std::uint64_t sy_seed = 42;
  synth->add_option("--out", sy_out, "output directory")->required();
  synth->add_option("--identities", sy_identities, "total identities");
  synth->add_option("--samples-per-id", sy_samples, "samples per identity");
  synth->add_option("--seed", sy_seed, "PRNG seed");

  auto* train = app.add_subcommand("train", "train the toy model");
  std::string tr_config, tr_out;
  train->add_option("--config", tr_config, "key = value config file")->required();
  train->add_option("--out", tr_out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_config, ev_data;
  std::vector<int> ev_ms = {1, 3, 5};
  eval->add_option("--checkpoint", ev_ckpt, "PNRC checkpoint")->required();
  eval->add_option("--config", ev_config, "config used for training")->required();
  eval->add_option("--data", ev_data, "dataset directory (default: regenerate)");
  eval->add_option("--M", ev_ms, "shot counts to evaluate");

  CLI11_PARSE(app, argc, argv);

  if (gradcheck->parsed()) {
    return run_guarded([&] { return cmd_gradcheck(gc_seed, gc_trials, gc_p, gc_corrupt); });
  }
  if (solve->parsed()) {
    return run_guarded(
        [&] { return cmd_solve(sv_p, sv_h, sv_p_path, sv_out, sv_iters, sv_eps, sv_ridge); });
  }
  if (bench->parsed()) {
    return run_guarded([&] { return cmd_bench_robust(br_trials, br_spec, br_iters); });
  }
  if (synth->parsed()) {
    return run_guarded([&] { return cmd_synth(sy_out, sy_identities, sy_samples, sy_seed); });
  }
  if (train->parsed()) {
    return run_guarded([&] { return cmd_train(tr_config, tr_out); });
  }
  if (eval->parsed()) {
    return run_guarded([&] { return cmd_eval(ev_ckpt, ev_config, ev_data, ev_ms); });
  }
  return 0;
}
