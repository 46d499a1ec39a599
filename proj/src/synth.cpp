#include "pnr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "pnr/error.hpp"

namespace pnr {

SynthInstance gen_regression_instance(const SynthSpec& spec) {
  Rng rng(spec.seed);
  SynthInstance out;

  out.problem.p = Matrix(spec.n, spec.d);
  for (long long i = 0; i < out.problem.p.size(); ++i) {
    out.problem.p.data()[i] = rng.uniform(-1.0, 1.0);
  }
  out.f_star = Matrix(spec.d, spec.feat_dim);
  for (long long i = 0; i < out.f_star.size(); ++i) {
    out.f_star.data()[i] = rng.uniform(-1.0, 1.0);
  }

  out.problem.h = matmul(out.problem.p, out.f_star);
  if (spec.noise_sigma > 0.0) {
    for (long long i = 0; i < out.problem.h.size(); ++i) {
      out.problem.h.data()[i] += spec.noise_sigma * rng.gaussian();
    }
  }

  // Outlier rows chosen without replacement (partial Fisher-Yates).
  const int n_outliers =
      static_cast<int>(std::lround(spec.outlier_frac * spec.n));
  std::vector<int> indices(spec.n);
  for (int j = 0; j < spec.n; ++j) indices[j] = j;
  for (int j = 0; j < n_outliers; ++j) {
    const int pick = j + rng.uniform_int(spec.n - j);
    std::swap(indices[j], indices[pick]);
  }
  out.outlier_rows.assign(indices.begin(), indices.begin() + n_outliers);
  std::sort(out.outlier_rows.begin(), out.outlier_rows.end());

  for (int row : out.outlier_rows) {
    for (int i = 0; i < spec.feat_dim; ++i) {
      out.problem.h(row, i) += spec.outlier_scale * rng.gaussian();
    }
  }
  return out;
}

// ---- toy images ----

Matrix to_patches(const Matrix& image, const ImageShape& shape, int grid) {
  if (image.rows() != shape.height || image.cols() != shape.width * shape.channels) {
    throw DimensionError("to_patches: image is " + image.shape_str() + ", expected " +
                         std::to_string(shape.height) + "x" +
                         std::to_string(shape.width * shape.channels));
  }
  if (shape.height % grid != 0 || shape.width % grid != 0) {
    throw ContractError("to_patches: grid must divide image dimensions");
  }
  const int ph = shape.height / grid, pw = shape.width / grid;
  Matrix out(grid * grid, ph * pw * shape.channels);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      int col = 0;
      for (int py = 0; py < ph; ++py) {
        for (int px = 0; px < pw; ++px) {
          for (int c = 0; c < shape.channels; ++c) {
            out(row, col++) =
                image(gy * ph + py, (gx * pw + px) * shape.channels + c);
          }
        }
      }
    }
  }
  return out;
}

Matrix from_patches(const Matrix& patches, const ImageShape& shape, int grid) {
  const int ph = shape.height / grid, pw = shape.width / grid;
  if (patches.rows() != grid * grid ||
      patches.cols() != ph * pw * shape.channels) {
    throw DimensionError("from_patches: patches are " + patches.shape_str());
  }
  Matrix image(shape.height, shape.width * shape.channels);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      int col = 0;
      for (int py = 0; py < ph; ++py) {
        for (int px = 0; px < pw; ++px) {
          for (int c = 0; c < shape.channels; ++c) {
            image(gy * ph + py, (gx * pw + px) * shape.channels + c) =
                patches(row, col++);
          }
        }
      }
    }
  }
  return image;
}

Matrix render_pose_heatmap(const Matrix& keypoints, const ImageShape& shape,
                           double sigma) {
  const int joints = keypoints.rows();
  if (keypoints.cols() != 2) {
    throw DimensionError("render_pose_heatmap: keypoints must be Jx2");
  }
  for (int j = 0; j < joints; ++j) {
    const double x = keypoints(j, 0), y = keypoints(j, 1);
    if (x < 0.0 || x > shape.width || y < 0.0 || y > shape.height) {
      throw ContractError("render_pose_heatmap: keypoint " + std::to_string(j) +
                          " at (" + std::to_string(x) + ", " + std::to_string(y) +
                          ") outside image bounds");
    }
  }
  Matrix map(shape.height, shape.width * joints);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      for (int j = 0; j < joints; ++j) {
        const double dx = cx - keypoints(j, 0);
        const double dy = cy - keypoints(j, 1);
        map(y, x * joints + j) = std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return map;
}

namespace {

// Fraction of the unit pixel square [px, px+1] x [py, py+1] covered by the
// rectangle [x0, x1] x [y0, y1]. Piecewise linear, hence continuous in the
// rectangle coordinates.
double pixel_coverage(double px, double py, double x0, double y0, double x1,
                      double y1) {
  const double ox = std::max(0.0, std::min(x1, px + 1.0) - std::max(x0, px));
  const double oy = std::max(0.0, std::min(y1, py + 1.0) - std::max(y0, py));
  return ox * oy;
}

void fill_rect(Matrix& image, const ImageShape& shape, double x0, double y0,
               double x1, double y1, const double* rgb) {
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const double cov = pixel_coverage(x, y, x0, y0, x1, y1);
      if (cov <= 0.0) continue;
      for (int c = 0; c < shape.channels; ++c) {
        double& v = image(y, x * shape.channels + c);
        v = (1.0 - cov) * v + cov * rgb[c];
      }
    }
  }
}

}  // namespace

Matrix render_toy_figure(const Matrix& keypoints, const Matrix& palette,
                         const ImageShape& shape) {
  if (keypoints.rows() != kToyKeypoints || keypoints.cols() != 2) {
    throw DimensionError("render_toy_figure: expected " +
                         std::to_string(kToyKeypoints) + "x2 keypoints");
  }
  if (palette.rows() != 3 || palette.cols() != shape.channels) {
    throw DimensionError("render_toy_figure: palette must be 3x" +
                         std::to_string(shape.channels));
  }
  Matrix image = Matrix::full(shape.height, shape.width * shape.channels, 0.05);

  // keypoints: 0 head, 1 neck, 2 hip, 3 left foot, 4 right foot, 5 torso mid
  const double head_x = keypoints(0, 0), head_y = keypoints(0, 1);
  const double neck_y = keypoints(1, 1);
  const double hip_x = keypoints(2, 0), hip_y = keypoints(2, 1);
  const double lf_x = keypoints(3, 0), lf_y = keypoints(3, 1);
  const double rf_x = keypoints(4, 0), rf_y = keypoints(4, 1);
  const double torso_x = keypoints(5, 0);

  const double* head_rgb = palette.data();
  const double* torso_rgb = palette.data() + shape.channels;
  const double* legs_rgb = palette.data() + 2 * shape.channels;

  // Painter's order: legs, torso, head.
  fill_rect(image, shape, lf_x - 0.7, hip_y, lf_x + 0.7, lf_y, legs_rgb);
  fill_rect(image, shape, rf_x - 0.7, hip_y, rf_x + 0.7, rf_y, legs_rgb);
  const double torso_hw = 2.2;
  fill_rect(image, shape, std::min(torso_x, hip_x) - torso_hw, neck_y,
            std::max(torso_x, hip_x) + torso_hw, hip_y, torso_rgb);
  fill_rect(image, shape, head_x - 1.6, head_y - 1.6, head_x + 1.6, head_y + 1.6,
            head_rgb);
  return image;
}

namespace {

Matrix sample_pose(Rng& rng, const ImageShape& shape) {
  Matrix kp(kToyKeypoints, 2);
  const double w = shape.width, h = shape.height;
  const double head_x = rng.uniform(4.0, w - 4.0);
  const double head_y = rng.uniform(2.0, 3.5);
  const double neck_y = head_y + rng.uniform(1.6, 2.4);
  const double hip_x = head_x + rng.uniform(-1.5, 1.5);
  const double hip_y = neck_y + rng.uniform(4.0, 6.0);
  const double spread = rng.uniform(1.0, 2.5);
  const double lf_x = std::clamp(hip_x - spread, 1.0, w - 1.0);
  const double rf_x = std::clamp(hip_x + spread, 1.0, w - 1.0);
  const double lf_y = std::min(h - 1.0, hip_y + rng.uniform(3.0, 4.5));
  const double rf_y = std::min(h - 1.0, hip_y + rng.uniform(3.0, 4.5));
  const double torso_x = hip_x + rng.uniform(-0.5, 0.5);

  kp(0, 0) = head_x;
  kp(0, 1) = head_y;
  kp(1, 0) = head_x + rng.uniform(-0.5, 0.5);
  kp(1, 1) = neck_y;
  kp(2, 0) = hip_x;
  kp(2, 1) = hip_y;
  kp(3, 0) = lf_x;
  kp(3, 1) = lf_y;
  kp(4, 0) = rf_x;
  kp(4, 1) = rf_y;
  kp(5, 0) = torso_x;
  kp(5, 1) = 0.5 * (neck_y + hip_y);
  return kp;
}

ToySample make_sample(int identity, const Matrix& palette, Rng& rng,
                      const ImageShape& shape) {
  ToySample s;
  s.identity = identity;
  s.source_keypoints = sample_pose(rng, shape);
  s.target_keypoints = sample_pose(rng, shape);
  s.source_image = render_toy_figure(s.source_keypoints, palette, shape);
  s.target_image = render_toy_figure(s.target_keypoints, palette, shape);
  s.source_pose_map = render_pose_heatmap(s.source_keypoints, shape, kHeatmapSigma);
  s.target_pose_map = render_pose_heatmap(s.target_keypoints, shape, kHeatmapSigma);
  return s;
}

}  // namespace

ToyDataset gen_toy_dataset(int identities, int samples_per_id, std::uint64_t seed) {
  if (identities < 1 || samples_per_id < 1) {
    throw ContractError("gen_toy_dataset: counts must be >= 1");
  }
  ToyDataset ds;
  ds.pose_channels = kToyKeypoints;
  const int train_ids = (identities + 1) / 2;

  for (int id = 0; id < identities; ++id) {
    Rng rng(derive_seed(seed, 0x746f79ULL * 1000003ULL + id));
    Matrix palette(3, ds.image_shape.channels);
    for (long long i = 0; i < palette.size(); ++i) {
      palette.data()[i] = rng.uniform(0.25, 1.0);
    }
    for (int k = 0; k < samples_per_id; ++k) {
      ToySample s = make_sample(id, palette, rng, ds.image_shape);
      if (id < train_ids) {
        ds.train.push_back(std::move(s));
      } else {
        ds.test.push_back(std::move(s));
      }
    }
  }
  return ds;
}

namespace {

const char* const kSampleMatrixTags[6] = {"src_img", "src_pose", "tgt_img",
                                          "tgt_pose", "src_kp", "tgt_kp"};

std::vector<const Matrix*> sample_matrices(const ToySample& s) {
  return {&s.source_image,    &s.source_pose_map, &s.target_image,
          &s.target_pose_map, &s.source_keypoints, &s.target_keypoints};
}

std::vector<Matrix*> sample_matrices(ToySample& s) {
  return {&s.source_image,    &s.source_pose_map, &s.target_image,
          &s.target_pose_map, &s.source_keypoints, &s.target_keypoints};
}

}  // namespace

void save_toy_dataset(const std::string& dir, const ToyDataset& ds) {
  std::ofstream manifest(dir + "/manifest.txt");
  if (!manifest) throw IoError("cannot open for writing: " + dir + "/manifest.txt");
  auto write_split = [&](const std::vector<ToySample>& samples, const char* split) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const ToySample& s = samples[i];
      std::vector<const Matrix*> mats = sample_matrices(s);
      for (int k = 0; k < 6; ++k) {
        const std::string name = std::string(split) + "_" + std::to_string(i) + "_" +
                                 kSampleMatrixTags[k] + ".pnrm";
        save_matrix(dir + "/" + name, *mats[k]);
        manifest << name << (k + 1 < 6 ? " " : "");
      }
      manifest << " id=" << s.identity << " split=" << split << "\n";
    }
  };
  write_split(ds.train, "train");
  write_split(ds.test, "test");
  if (!manifest) throw IoError("manifest write failed");
}

ToyDataset load_toy_dataset(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw IoError("cannot open: " + dir + "/manifest.txt");
  ToyDataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string names[6], id_field, split_field;
    for (int k = 0; k < 6; ++k) {
      if (!(fields >> names[k])) throw IoError("manifest: malformed line '" + line + "'");
    }
    if (!(fields >> id_field >> split_field) || id_field.rfind("id=", 0) != 0 ||
        split_field.rfind("split=", 0) != 0) {
      throw IoError("manifest: malformed line '" + line + "'");
    }
    ToySample s;
    s.identity = std::stoi(id_field.substr(3));
    std::vector<Matrix*> mats = sample_matrices(s);
    for (int k = 0; k < 6; ++k) *mats[k] = load_matrix(dir + "/" + names[k]);
    const std::string split = split_field.substr(6);
    if (split == "train") {
      ds.train.push_back(std::move(s));
    } else if (split == "test") {
      ds.test.push_back(std::move(s));
    } else {
      throw IoError("manifest: unknown split '" + split + "'");
    }
  }
  return ds;
}

}  // namespace pnr
