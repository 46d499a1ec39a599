#include <doctest.h>

#include <cmath>

#include "pnr/error.hpp"
#include "pnr/metrics.hpp"
#include "pnr/rng.hpp"

using namespace pnr;

namespace {

Matrix random_image(Rng& rng, const ImageShape& shape) {
  Matrix m(shape.height, shape.width * shape.channels);
  for (long long i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform01();
  return m;
}

}  // namespace

TEST_CASE("ssim of an image with itself is exactly 1") {
  Rng rng(71);
  ImageShape shape;
  for (int t = 0; t < 5; ++t) {
    Matrix img = random_image(rng, shape);
    CHECK(ssim(img, img, shape) == 1.0);
  }
}

TEST_CASE("ssim symmetry is exact") {
  Rng rng(72);
  ImageShape shape;
  for (int t = 0; t < 5; ++t) {
    Matrix a = random_image(rng, shape);
    Matrix b = random_image(rng, shape);
    CHECK(ssim(a, b, shape) == ssim(b, a, shape));
  }
}

TEST_CASE("ssim of constant images matches the direct formula") {
  ImageShape shape;
  Matrix a = Matrix::full(shape.height, shape.width * shape.channels, 0.2);
  Matrix b = Matrix::full(shape.height, shape.width * shape.channels, 0.8);
  SsimParams params;
  // zero variance: contrast/structure term degenerates to C2/C2 = 1 and the
  // luminance term carries everything
  const double c1 = params.c1();
  const double expected = (2.0 * 0.2 * 0.8 + c1) / (0.2 * 0.2 + 0.8 * 0.8 + c1);
  CHECK(std::fabs(ssim(a, b, shape, params) - expected) <= 1e-12);
}

TEST_CASE("ssim of anti-correlated high-variance images is negative") {
  ImageShape shape;
  Matrix a(shape.height, shape.width * shape.channels);
  for (long long i = 0; i < a.size(); ++i) a.data()[i] = (i % 2 == 0) ? 1.0 : 0.0;
  Matrix b = map_unary(a, [](double v) { return 1.0 - v; });
  CHECK(ssim(a, b, shape) < 0.0);
}

TEST_CASE("ssim upper bound") {
  Rng rng(74);
  ImageShape shape;
  for (int t = 0; t < 10; ++t) {
    Matrix a = random_image(rng, shape);
    Matrix b = random_image(rng, shape);
    CHECK(ssim(a, b, shape) <= 1.0);
  }
}

TEST_CASE("ssim rejects bad inputs") {
  ImageShape shape;
  Matrix a = Matrix::zeros(shape.height, shape.width * shape.channels);
  CHECK_THROWS_AS(ssim(a, Matrix(8, 8), shape), DimensionError);
  ImageShape tiny;
  tiny.height = 4;
  tiny.width = 4;
  Matrix small = Matrix::zeros(4, 4 * 3);
  CHECK_THROWS_AS(ssim(small, small, tiny), DimensionError);
}

TEST_CASE("recovery_error examples and properties") {
  Matrix f(2, 2, {1, 2, 3, 4});
  CHECK(recovery_error(f, f) == 0.0);
  Matrix g = f + Matrix::ones(2, 2);
  CHECK(recovery_error(g, f) == doctest::Approx(2.0).epsilon(1e-15));

  // invariant under a simultaneous row permutation of both arguments
  Matrix f_perm(2, 2, {3, 4, 1, 2});
  Matrix g_perm(2, 2, {4, 5, 2, 3});
  CHECK(recovery_error(g_perm, f_perm) == doctest::Approx(recovery_error(g, f)));

  // triangle inequality on random triples
  Rng rng(75);
  for (int t = 0; t < 20; ++t) {
    Matrix x(3, 3), y(3, 3), z(3, 3);
    for (long long i = 0; i < x.size(); ++i) {
      x.data()[i] = rng.uniform(-1, 1);
      y.data()[i] = rng.uniform(-1, 1);
      z.data()[i] = rng.uniform(-1, 1);
    }
    CHECK(recovery_error(x, z) <= recovery_error(x, y) + recovery_error(y, z) + 1e-12);
  }
  CHECK_THROWS_AS(recovery_error(f, Matrix(3, 3)), DimensionError);
}

TEST_CASE("evaluate_with_generator: ground-truth oracle scores perfectly") {
  ToyDataset ds = gen_toy_dataset(2, 3, 81);
  std::vector<EvalTuple> tuples = build_eval_tuples(ds.test, 3, 0.1, 81);
  REQUIRE_FALSE(tuples.empty());
  EvalReport report = evaluate_with_generator(
      tuples, {1, 3}, ds.image_shape,
      [](const EvalTuple& tuple, int) { return tuple.target_image; });
  CHECK(report.mean_ssim == 1.0);
  CHECK(report.mean_l1 == 0.0);
  for (const EvalPerShot& p : report.per_m) {
    CHECK(p.median_ssim == 1.0);
  }
}

TEST_CASE("untrained model scores below the oracle") {
  TrainConfig cfg;
  cfg.identities = 4;
  cfg.samples_per_id = 3;
  ToyDataset ds = gen_toy_dataset(cfg.identities, cfg.samples_per_id, cfg.seed);
  Rng rng(82);
  ModelParams params = ModelParams::init(ModelDims::from_config(cfg), rng);
  EvalReport report = evaluate_checkpoint(params, ds.test, cfg, {1});
  CHECK(report.mean_ssim < 0.9);
  CHECK(report.mean_l1 > 0.0);
}

TEST_CASE("training improves evaluation SSIM over the fresh model") {
  TrainConfig cfg;
  cfg.identities = 4;
  cfg.samples_per_id = 3;
  cfg.lambda3 = 0.0;
  cfg.lambda4 = 0.0;
  cfg.steps = 80;
  ToyDataset ds = gen_toy_dataset(cfg.identities, cfg.samples_per_id, cfg.seed);
  Trainer trainer(cfg);
  ModelParams untrained = trainer.params();
  train_loop(trainer, ds);
  EvalReport before = evaluate_checkpoint(untrained, ds.test, cfg, {1});
  EvalReport after = evaluate_checkpoint(trainer.params(), ds.test, cfg, {1});
  CHECK(after.mean_ssim > before.mean_ssim);
  CHECK(after.mean_l1 < before.mean_l1);
}

TEST_CASE("eval tuples: nested source pools and determinism") {
  ToyDataset ds = gen_toy_dataset(2, 4, 83);
  std::vector<EvalTuple> a = build_eval_tuples(ds.test, 3, 0.2, 7);
  std::vector<EvalTuple> b = build_eval_tuples(ds.test, 3, 0.2, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].sources.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(a[i].sources[k].first == b[i].sources[k].first);
    }
  }
  // different seed, different noise
  std::vector<EvalTuple> c = build_eval_tuples(ds.test, 3, 0.2, 8);
  CHECK_FALSE(a[0].sources[0].first == c[0].sources[0].first);
}

TEST_CASE("eval report text blocks") {
  EvalReport report;
  report.mean_l1 = 0.125;
  report.mean_ssim = 0.5;
  report.per_m.push_back(EvalPerShot{1, 0.5, 0.5, 0.125});
  const std::string kv = report.to_key_values();
  CHECK(kv.find("mean_l1 = 0.125") != std::string::npos);
  CHECK(kv.find("median_ssim_m1 = 0.5") != std::string::npos);
  CHECK(report.to_text().find("M=1") != std::string::npos);
}
