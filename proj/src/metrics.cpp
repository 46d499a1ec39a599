#include "pnr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "pnr/error.hpp"

namespace pnr {

double ssim(const Matrix& a, const Matrix& b, const ImageShape& shape,
            const SsimParams& params) {
  if (!a.same_shape(b)) {
    throw DimensionError("ssim: shapes " + a.shape_str() + " vs " + b.shape_str());
  }
  if (a.rows() != shape.height || a.cols() != shape.width * shape.channels) {
    throw DimensionError("ssim: image is " + a.shape_str() + ", shape says " +
                         std::to_string(shape.height) + "x" +
                         std::to_string(shape.width * shape.channels));
  }
  const int win = params.window;
  if (shape.height < win || shape.width < win) {
    throw DimensionError("ssim: image smaller than the " + std::to_string(win) +
                         "-pixel window");
  }
  const double c1 = params.c1();
  const double c2 = params.c2();
  const int tiles_y = shape.height / win;
  const int tiles_x = shape.width / win;
  const double n = static_cast<double>(win) * win;

  double total = 0.0;
  int count = 0;
  for (int c = 0; c < shape.channels; ++c) {
    for (int ty = 0; ty < tiles_y; ++ty) {
      for (int tx = 0; tx < tiles_x; ++tx) {
        double sa = 0.0, sb = 0.0;
        for (int y = 0; y < win; ++y) {
          for (int x = 0; x < win; ++x) {
            sa += a(ty * win + y, (tx * win + x) * shape.channels + c);
            sb += b(ty * win + y, (tx * win + x) * shape.channels + c);
          }
        }
        const double mu_a = sa / n, mu_b = sb / n;
        double var_a = 0.0, var_b = 0.0, cov = 0.0;
        for (int y = 0; y < win; ++y) {
          for (int x = 0; x < win; ++x) {
            const double da = a(ty * win + y, (tx * win + x) * shape.channels + c) - mu_a;
            const double db = b(ty * win + y, (tx * win + x) * shape.channels + c) - mu_b;
            var_a += da * da;
            var_b += db * db;
            cov += da * db;
          }
        }
        var_a /= n;
        var_b /= n;
        cov /= n;
        const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
        const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / count;
}

double recovery_error(const Matrix& f_hat, const Matrix& f_star) {
  if (!f_hat.same_shape(f_star)) {
    throw DimensionError("recovery_error: shapes " + f_hat.shape_str() + " vs " +
                         f_star.shape_str());
  }
  return fro_norm(f_hat - f_star);
}

std::vector<EvalTuple> build_eval_tuples(const std::vector<ToySample>& samples,
                                         int max_m, double noise_sigma,
                                         std::uint64_t seed) {
  // Group sample indices by identity, preserving order.
  std::map<int, std::vector<int>> by_identity;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    by_identity[samples[i].identity].push_back(i);
  }

  std::vector<EvalTuple> tuples;
  int tuple_index = 0;
  for (const auto& [identity, members] : by_identity) {
    for (std::size_t j = 0; j < members.size(); ++j) {
      const ToySample& target = samples[members[j]];
      EvalTuple tuple;
      tuple.target_image = target.target_image;
      tuple.target_pose_map = target.target_pose_map;

      Rng noise_rng(derive_seed(seed, 0x6576616cULL + tuple_index));
      for (std::size_t k = 0; tuple.sources.size() < static_cast<std::size_t>(max_m);
           ++k) {
        // siblings other than the target sample, cycling if too few
        const int idx = members[(j + 1 + k) % members.size()];
        const ToySample& src = samples[idx];
        Matrix image = src.source_image;
        if (noise_sigma > 0.0) {
          // Per-shot illumination jitter (one offset per channel) plus mild
          // pixel noise. The per-shot component is what multi-shot
          // aggregation can average away; iid pixel noise alone is already
          // averaged inside a single shot's rows.
          const int channels = 3;
          double offset[3];
          for (int c = 0; c < channels; ++c) {
            offset[c] = noise_sigma * noise_rng.gaussian();
          }
          const double pixel_sigma = 0.2 * noise_sigma;
          for (int y = 0; y < image.rows(); ++y) {
            for (int x = 0; x < image.cols() / channels; ++x) {
              for (int c = 0; c < channels; ++c) {
                double& v = image(y, x * channels + c);
                v = std::clamp(v + offset[c] + pixel_sigma * noise_rng.gaussian(),
                               0.0, 1.0);
              }
            }
          }
        }
        tuple.sources.emplace_back(std::move(image), src.source_pose_map);
        if (members.size() == 1) break;  // lone sample: single self-shot only
      }
      tuples.push_back(std::move(tuple));
      ++tuple_index;
    }
  }
  return tuples;
}

namespace {

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

EvalReport evaluate_with_generator(const std::vector<EvalTuple>& tuples,
                                   const std::vector<int>& ms, const ImageShape& shape,
                                   const GeneratorFn& generate) {
  if (tuples.empty()) throw ContractError("evaluate: empty tuple set");
  EvalReport report;
  for (int m : ms) {
    EvalPerShot per;
    per.m = m;
    std::vector<double> ssims;
    double l1_total = 0.0;
    for (const EvalTuple& tuple : tuples) {
      const Matrix generated = generate(tuple, m);
      const double s = ssim(generated, tuple.target_image, shape);
      ssims.push_back(s);
      l1_total += loss_l1(generated, tuple.target_image);
    }
    per.mean_l1 = l1_total / static_cast<double>(tuples.size());
    double ssim_total = 0.0;
    for (double s : ssims) ssim_total += s;
    per.mean_ssim = ssim_total / static_cast<double>(ssims.size());
    per.median_ssim = median(ssims);
    report.per_m.push_back(per);
  }
  // headline numbers: the M=1 row when present, else the first row
  const EvalPerShot* headline = &report.per_m.front();
  for (const EvalPerShot& p : report.per_m) {
    if (p.m == 1) headline = &p;
  }
  report.mean_l1 = headline->mean_l1;
  report.mean_ssim = headline->mean_ssim;
  return report;
}

EvalReport evaluate_checkpoint(const ModelParams& params,
                               const std::vector<ToySample>& test_set,
                               const TrainConfig& cfg, const std::vector<int>& ms) {
  if (test_set.empty()) throw ContractError("evaluate_checkpoint: empty test set");
  int max_m = 1;
  for (int m : ms) max_m = std::max(max_m, m);
  std::vector<EvalTuple> tuples =
      build_eval_tuples(test_set, max_m, cfg.eval_noise, cfg.seed);
  const PnrConfig pnr_cfg = cfg.pnr();
  GeneratorFn generate = [&](const EvalTuple& tuple, int m) {
    std::vector<std::pair<Matrix, Matrix>> shots;
    const int use = std::min<int>(m, static_cast<int>(tuple.sources.size()));
    shots.assign(tuple.sources.begin(), tuple.sources.begin() + use);
    return infer_multishot(params, shots, tuple.target_pose_map, pnr_cfg);
  };
  return evaluate_with_generator(tuples, ms, params.dims.image, generate);
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out.precision(6);
  out << "single-shot: mean L1 " << mean_l1 << ", mean SSIM " << mean_ssim << "\n";
  for (const EvalPerShot& p : per_m) {
    out << "M=" << p.m << ": median SSIM " << p.median_ssim << ", mean SSIM "
        << p.mean_ssim << ", mean L1 " << p.mean_l1 << "\n";
  }
  return out.str();
}

std::string EvalReport::to_key_values() const {
  std::ostringstream out;
  out.precision(17);
  out << "mean_l1 = " << mean_l1 << "\n";
  out << "mean_ssim = " << mean_ssim << "\n";
  for (const EvalPerShot& p : per_m) {
    out << "median_ssim_m" << p.m << " = " << p.median_ssim << "\n";
    out << "mean_ssim_m" << p.m << " = " << p.mean_ssim << "\n";
    out << "mean_l1_m" << p.m << " = " << p.mean_l1 << "\n";
  }
  return out.str();
}

}  // namespace pnr
