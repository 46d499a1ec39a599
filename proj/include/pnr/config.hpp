#pragma once

#include <cstdint>
#include <string>

#include "pnr/solver.hpp"

namespace pnr {

enum class TrainMode { kSupervised, kUnsupervised, kMultishot };

const char* to_string(TrainMode mode);

// Everything a training or evaluation run needs. Loss weights and optimizer
// defaults follow the reference setup (lr 0.002, beta1 0.5, beta2 0.999,
// lambda = (5, 5, 10, 10) supervised / (5, 5, 0, 10) unsupervised); the
// dimensions default to desk scale.
struct TrainConfig {
  TrainMode mode = TrainMode::kSupervised;
  int p = 2;
  int steps = 300;
  int batch = 4;
  double lr = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lambda1 = 5.0;
  double lambda2 = 5.0;
  double lambda3 = 10.0;
  double lambda4 = 10.0;
  std::uint64_t seed = 42;

  // model dimensions (toy scale; the reference d=20, D=256 are reachable
  // through these keys for scale tests)
  int d = 3;
  int feat_dim = 16;  // D
  int hidden = 32;
  int layers = 2;  // affine layers per block

  // solver
  int irls_iters = 5;
  double irls_eps = 1e-8;
  double ridge = 1e-9;

  // data
  int identities = 8;
  int samples_per_id = 6;
  int multishot_m = 1;
  double keep_prob = 0.5;    // unsupervised row mask
  double eval_noise = 0.25;  // source-image noise during evaluation

  void validate() const;  // throws ConfigError
  PnrConfig pnr() const;
};

// Plain "key = value" file, one pair per line, '#' starts a comment.
// Unknown keys are rejected. In unsupervised mode lambda3 defaults to 0 and
// any explicit nonzero value is a configuration error.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);

// Full snapshot, parseable by parse_config_text.
std::string config_to_text(const TrainConfig& cfg);

}  // namespace pnr
