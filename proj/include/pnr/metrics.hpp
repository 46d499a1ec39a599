#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pnr/model.hpp"
#include "pnr/synth.hpp"

namespace pnr {

// Uniform-window SSIM constants; C1/C2 follow the usual K1=0.01, K2=0.03
// conventions for dynamic range L.
struct SsimParams {
  int window = 8;
  double dynamic_range = 1.0;
  double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
  double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

// Mean SSIM index over non-overlapping window x window tiles, computed per
// channel with population statistics and averaged over tiles and channels.
// Images use the raw (height, width*channels) layout.
double ssim(const Matrix& a, const Matrix& b, const ImageShape& shape,
            const SsimParams& params = SsimParams{});

// Frobenius norm of the difference.
double recovery_error(const Matrix& f_hat, const Matrix& f_star);

// ---- checkpoint evaluation ----

// One evaluation tuple: a pool of source (image, pose map) shots of the
// same identity plus one target view to predict.
struct EvalTuple {
  std::vector<std::pair<Matrix, Matrix>> sources;
  Matrix target_image;
  Matrix target_pose_map;
};

// Builds tuples from a toy split: for each sample, the target view of that
// sample plus the source views of up to max_m sibling samples. Gaussian
// noise of the given sigma is added to source images (clamped to [0, 1]),
// seeded per tuple so every M sees the same corrupted pool.
std::vector<EvalTuple> build_eval_tuples(const std::vector<ToySample>& samples,
                                         int max_m, double noise_sigma,
                                         std::uint64_t seed);

struct EvalPerShot {
  int m = 0;
  double median_ssim = 0.0;
  double mean_ssim = 0.0;
  double mean_l1 = 0.0;
};

struct EvalReport {
  double mean_l1 = 0.0;    // single-shot (M = 1)
  double mean_ssim = 0.0;  // single-shot (M = 1)
  std::vector<EvalPerShot> per_m;

  std::string to_text() const;       // human-readable block
  std::string to_key_values() const; // machine-readable "key = value" block
};

using GeneratorFn = std::function<Matrix(const EvalTuple&, int m)>;

// Shared aggregation: runs the generator at each requested shot count M
// (using the first M sources of each tuple) and scores against the target.
EvalReport evaluate_with_generator(const std::vector<EvalTuple>& tuples,
                                   const std::vector<int>& ms, const ImageShape& shape,
                                   const GeneratorFn& generate);

// Full pipeline evaluation of trained parameters.
EvalReport evaluate_checkpoint(const ModelParams& params,
                               const std::vector<ToySample>& test_set,
                               const TrainConfig& cfg,
                               const std::vector<int>& ms = {1, 3, 5});

}  // namespace pnr
