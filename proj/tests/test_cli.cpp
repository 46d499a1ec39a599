#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pnr/matrix.hpp"
#include "pnr/rng.hpp"

using namespace pnr;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string out_file =
      (fs::temp_directory_path() / ("pnr_cli_out_" + std::to_string(counter++) + ".txt"))
          .string();
  const std::string cmd = std::string(PNR_CLI_PATH) + " " + args + " > " + out_file +
                          " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WEXITSTATUS(status);
  std::ifstream f(out_file);
  std::stringstream buf;
  buf << f.rdbuf();
  result.out = buf.str();
  std::remove(out_file.c_str());
  return result;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("pnr_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& child = "") const {
    return child.empty() ? path.string() : (path / child).string();
  }
};

}  // namespace

TEST_CASE("solve: identity design copies H into the output file") {
  TempDir dir("solve_id");
  Rng rng(90);
  Matrix h(3, 2);
  for (long long i = 0; i < h.size(); ++i) h.data()[i] = rng.uniform(-1, 1);
  save_matrix(dir.str("H.pnrm"), h);
  save_matrix(dir.str("P.pnrm"), Matrix::identity(3));

  RunResult r = run_cli("solve --p 2 --ridge 0 --H " + dir.str("H.pnrm") + " --P " +
                        dir.str("P.pnrm") + " --out " + dir.str("F.pnrm"));
  CHECK(r.exit_code == 0);
  Matrix f = load_matrix(dir.str("F.pnrm"));
  CHECK(fro_norm(f - h) <= 1e-12 * (1.0 + fro_norm(h)));
}

TEST_CASE("solve: p=1 median instance reports objective near 3") {
  TempDir dir("solve_median");
  save_matrix(dir.str("H.pnrm"), Matrix(3, 1, {0, 0, 3}));
  save_matrix(dir.str("P.pnrm"), Matrix(3, 1, {1, 1, 1}));
  RunResult r = run_cli("solve --p 1 --iters 12 --ridge 0 --H " + dir.str("H.pnrm") +
                        " --P " + dir.str("P.pnrm") + " --out " + dir.str("F.pnrm"));
  CHECK(r.exit_code == 0);
  const std::string key = "objective = ";
  auto pos = r.out.find(key);
  REQUIRE(pos != std::string::npos);
  const double objective = std::stod(r.out.substr(pos + key.size()));
  CHECK(std::fabs(objective - 3.0) < 1e-3);
  CHECK(r.out.find("iterations_used = 12") != std::string::npos);
}

TEST_CASE("solve: missing file exits 2, shape mismatch exits 3, singular exits 4") {
  TempDir dir("solve_err");
  save_matrix(dir.str("H.pnrm"), Matrix(3, 1, {0, 0, 3}));
  save_matrix(dir.str("P.pnrm"), Matrix(2, 1, {1, 1}));
  save_matrix(dir.str("Z.pnrm"), Matrix::zeros(3, 2));

  CHECK(run_cli("solve --H nope.pnrm --P " + dir.str("P.pnrm") + " --out " +
                dir.str("F.pnrm"))
            .exit_code == 2);
  CHECK(run_cli("solve --H " + dir.str("H.pnrm") + " --P " + dir.str("P.pnrm") +
                " --out " + dir.str("F.pnrm"))
            .exit_code == 3);
  CHECK(run_cli("solve --ridge 0 --H " + dir.str("H.pnrm") + " --P " + dir.str("Z.pnrm") +
                " --out " + dir.str("F.pnrm"))
            .exit_code == 4);
}

TEST_CASE("solve output is bit-identical across reruns") {
  TempDir dir("solve_repro");
  Rng rng(91);
  Matrix h(6, 2), p(6, 2);
  for (long long i = 0; i < h.size(); ++i) h.data()[i] = rng.uniform(-1, 1);
  for (long long i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-1, 1);
  save_matrix(dir.str("H.pnrm"), h);
  save_matrix(dir.str("P.pnrm"), p);
  const std::string base = "solve --p 1 --iters 7 --H " + dir.str("H.pnrm") + " --P " +
                           dir.str("P.pnrm") + " --out ";
  CHECK(run_cli(base + dir.str("F1.pnrm")).exit_code == 0);
  CHECK(run_cli(base + dir.str("F2.pnrm")).exit_code == 0);
  CHECK(read_bytes(dir.str("F1.pnrm")) == read_bytes(dir.str("F2.pnrm")));
}

TEST_CASE("gradcheck: default run passes, output has one line per check") {
  RunResult r = run_cli("gradcheck --trials 1 --seed 5");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("pnr_lse_sum_ht") != std::string::npos);
  CHECK(r.out.find("pnr_lad_frozen_map") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("gradcheck: --p 1 includes the frozen-map check only") {
  RunResult r = run_cli("gradcheck --trials 1 --p 1");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("pnr_lad_frozen_map") != std::string::npos);
  CHECK(r.out.find("pnr_lse_sum_ht") == std::string::npos);
}

TEST_CASE("gradcheck: corrupted-backward control exits 1") {
  RunResult r = run_cli("gradcheck --trials 1 --corrupt-backward");
  CHECK(r.exit_code == 1);
  CHECK(r.out.find("corrupted_backward_control") != std::string::npos);
  CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("bench-robust: single deterministic trial") {
  RunResult a = run_cli("bench-robust --trials 1 --seed 31");
  RunResult b = run_cli("bench-robust --trials 1 --seed 31");
  CHECK(a.exit_code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.find("lad_win_rate") != std::string::npos);
}

TEST_CASE("bench-robust: default outlier spec shows the robustness advantage") {
  RunResult r = run_cli("bench-robust --trials 100 --seed 1");
  CHECK(r.exit_code == 0);
  const std::string key = "lad_win_rate = ";
  auto pos = r.out.find(key);
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(r.out.substr(pos + key.size())) >= 0.9);
}

TEST_CASE("synth: dataset directories are bit-identical across reruns") {
  TempDir dir_a("synth_a");
  TempDir dir_b("synth_b");
  const std::string args = "synth --identities 2 --samples-per-id 2 --seed 11 --out ";
  CHECK(run_cli(args + dir_a.str()).exit_code == 0);
  CHECK(run_cli(args + dir_b.str()).exit_code == 0);
  CHECK(read_bytes(dir_a.str("manifest.txt")) == read_bytes(dir_b.str("manifest.txt")));
  CHECK(read_bytes(dir_a.str("train_0_src_img.pnrm")) ==
        read_bytes(dir_b.str("train_0_src_img.pnrm")));
  CHECK(read_bytes(dir_a.str("test_1_tgt_pose.pnrm")) ==
        read_bytes(dir_b.str("test_1_tgt_pose.pnrm")));
}

TEST_CASE("train + eval round trip with reproducible artifacts") {
  TempDir dir("train");
  const std::string cfg_path = dir.str("cfg.txt");
  {
    std::ofstream cfg(cfg_path);
    cfg << "mode = supervised\nsteps = 12\nbatch = 2\nlambda3 = 0\nlambda4 = 0\n"
        << "identities = 4\nsamples_per_id = 3\nseed = 21\n";
  }
  RunResult t1 = run_cli("train --config " + cfg_path + " --out " + dir.str("run1"));
  CHECK(t1.exit_code == 0);
  CHECK(fs::exists(dir.str("run1/checkpoint.pnrc")));
  CHECK(fs::exists(dir.str("run1/loss_log.csv")));
  CHECK(fs::exists(dir.str("run1/manifest.txt")));

  RunResult t2 = run_cli("train --config " + cfg_path + " --out " + dir.str("run2"));
  CHECK(t2.exit_code == 0);
  CHECK(read_bytes(dir.str("run1/checkpoint.pnrc")) ==
        read_bytes(dir.str("run2/checkpoint.pnrc")));
  CHECK(read_bytes(dir.str("run1/loss_log.csv")) ==
        read_bytes(dir.str("run2/loss_log.csv")));

  // loss log has the documented CSV header
  std::ifstream log(dir.str("run1/loss_log.csv"));
  std::string header;
  std::getline(log, header);
  CHECK(header == "step,l1,per,gan_i,gan_k");

  RunResult ev = run_cli("eval --checkpoint " + dir.str("run1/checkpoint.pnrc") +
                         " --config " + cfg_path + " --M 1 2");
  CHECK(ev.exit_code == 0);
  CHECK(ev.out.find("median_ssim_m1") != std::string::npos);
  CHECK(ev.out.find("median_ssim_m2") != std::string::npos);

  // eval from a saved dataset directory
  CHECK(run_cli("synth --identities 4 --samples-per-id 3 --seed 21 --out " +
                dir.str("data"))
            .exit_code == 0);
  RunResult ev2 = run_cli("eval --checkpoint " + dir.str("run1/checkpoint.pnrc") +
                          " --config " + cfg_path + " --data " + dir.str("data") +
                          " --M 1");
  CHECK(ev2.exit_code == 0);
}

TEST_CASE("train: config errors exit 5") {
  TempDir dir("cfg_err");
  {
    std::ofstream cfg(dir.str("bad1.txt"));
    cfg << "mode = unsupervised\nlambda3 = 5\n";
  }
  CHECK(run_cli("train --config " + dir.str("bad1.txt") + " --out " + dir.str("o1"))
            .exit_code == 5);
  {
    std::ofstream cfg(dir.str("bad2.txt"));
    cfg << "not_a_key = 1\n";
  }
  CHECK(run_cli("train --config " + dir.str("bad2.txt") + " --out " + dir.str("o2"))
            .exit_code == 5);
  CHECK(run_cli("train --config " + dir.str("missing.txt") + " --out " + dir.str("o3"))
            .exit_code == 2);
}

TEST_CASE("PNR_SEED environment override changes the run") {
  TempDir dir("env_seed");
  const std::string cfg_path = dir.str("cfg.txt");
  {
    std::ofstream cfg(cfg_path);
    cfg << "mode = supervised\nsteps = 3\nbatch = 2\nlambda3 = 0\nlambda4 = 0\n"
        << "identities = 2\nsamples_per_id = 2\nseed = 5\n";
  }
  RunResult plain = run_cli("train --config " + cfg_path + " --out " + dir.str("a"));
  CHECK(plain.exit_code == 0);
  RunResult repeat = run_cli("train --config " + cfg_path + " --out " + dir.str("b"));
  CHECK(repeat.exit_code == 0);
  // same seed -> identical checkpoints
  CHECK(read_bytes(dir.str("a/checkpoint.pnrc")) ==
        read_bytes(dir.str("b/checkpoint.pnrc")));

  const std::string env_cmd = "PNR_SEED=99 " + std::string(PNR_CLI_PATH) +
                              " train --config " + cfg_path + " --out " + dir.str("c") +
                              " > " + dir.str("env_out.txt") + " 2>&1";
  REQUIRE(std::system(env_cmd.c_str()) == 0);
  std::ifstream f(dir.str("c/manifest.txt"));
  std::stringstream buf;
  buf << f.rdbuf();
  CHECK(buf.str().find("seed = 99") != std::string::npos);
}
