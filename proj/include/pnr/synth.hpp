#pragma once

#include <cstdint>
#include <vector>

#include "pnr/matrix.hpp"
#include "pnr/rng.hpp"
#include "pnr/solver.hpp"

namespace pnr {

// Raw regression instance generator: H = P F* + noise, with a chosen
// fraction of rows additionally hit by large perturbations. F* stays the
// unambiguous ground truth because outliers are additive.
struct SynthSpec {
  int n = 32;
  int d = 4;
  int feat_dim = 3;  // D
  double noise_sigma = 0.01;
  double outlier_frac = 0.2;
  double outlier_scale = 10.0;
  std::uint64_t seed = 1;
};

struct SynthInstance {
  RegressionProblem problem;
  Matrix f_star;
  std::vector<int> outlier_rows;
};

SynthInstance gen_regression_instance(const SynthSpec& spec);

// ---- toy image data ----
//
// Images are dense row-major matrices of shape (height, width*channels):
// pixel (y, x, c) lives at (y, x*channels + c), values in [0, 1].

struct ImageShape {
  int height = 16;
  int width = 16;
  int channels = 3;
  long long values() const { return static_cast<long long>(height) * width * channels; }
};

// Row k of the result is patch k (row-major over the grid), its values the
// patch's pixels in (y, x, c) order. grid must divide both dimensions.
Matrix to_patches(const Matrix& image, const ImageShape& shape, int grid);
Matrix from_patches(const Matrix& patches, const ImageShape& shape, int grid);

// One training tuple: a source/target view pair of the same identity,
// images plus J-channel Gaussian keypoint heatmaps.
struct ToySample {
  int identity = 0;
  Matrix source_keypoints;  // J x 2, (x, y) pixel coordinates
  Matrix target_keypoints;
  Matrix source_image;  // (16, 16*3)
  Matrix target_image;
  Matrix source_pose_map;  // (16, 16*J)
  Matrix target_pose_map;
};

struct ToyDataset {
  std::vector<ToySample> train;
  std::vector<ToySample> test;
  int pose_channels = 6;  // J
  ImageShape image_shape;
};

constexpr int kToyKeypoints = 6;
constexpr double kHeatmapSigma = 1.5;

// channel j = exp(-||pixel - kp_j||^2 / (2 sigma^2)), measured from pixel
// centers. Keypoints must lie inside the image bounds.
Matrix render_pose_heatmap(const Matrix& keypoints, const ImageShape& shape,
                           double sigma);

// Renders a 3-rectangle figure (head / torso / legs) whose layout follows
// the keypoints and whose colors follow the identity palette. Rectangles
// are filled with exact pixel-coverage antialiasing, so the render is
// continuous in the keypoint coordinates.
Matrix render_toy_figure(const Matrix& keypoints, const Matrix& palette,
                         const ImageShape& shape);

// identities are split between train and test (train gets the first
// ceil(identities/2)); identity sets of the two splits are disjoint.
ToyDataset gen_toy_dataset(int identities, int samples_per_id, std::uint64_t seed);

// Directory layout: one PNRM file per matrix plus manifest.txt with one
// sample per line: file names, identity id, split.
void save_toy_dataset(const std::string& dir, const ToyDataset& ds);
ToyDataset load_toy_dataset(const std::string& dir);

}  // namespace pnr
