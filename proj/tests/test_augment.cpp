#include "ciper/augment.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace ciper;
using ciper::test::random_image;
using ciper::test::random_matrix;

namespace {

ImageAugParams random_params(Rng& rng) {
  ImageAugParams p;
  p.crop.h = rng.uniform(0.3, 1.0);
  p.crop.w = rng.uniform(0.3, 1.0);
  p.crop.x = rng.uniform() * (1.0 - p.crop.w);
  p.crop.y = rng.uniform() * (1.0 - p.crop.h);
  p.flip = rng.bernoulli(0.5) ? 1 : 0;
  p.jitter = {rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4), rng.uniform(-0.1, 0.1)};
  p.grayscale = rng.bernoulli(0.5) ? 1 : 0;
  p.applied = {true, p.flip == 1, true, p.grayscale == 0};
  return p;
}

}  // namespace

TEST_CASE("standard image schema layout") {
  const auto s = AugmentationSchema::standard_image();
  CHECK(s.total_dims() == 10);
  CHECK(s.record_width() == 10);
  CHECK(s.predictor_width() == 10);
  const std::vector<std::string> expected{"crop_x",     "crop_y",     "crop_h", "crop_w", "flip",
                                          "brightness", "contrast",   "saturation", "hue", "grayscale"};
  CHECK(s.slot_names() == expected);
}

TEST_CASE("dataset schema widths") {
  const auto both = AugmentationSchema::dataset(true, true, 4);
  CHECK(both.total_dims() == 3);
  CHECK(both.record_width() == 4);
  CHECK(both.predictor_width() == 7);
  CHECK(AugmentationSchema::dataset(false, true, 11).predictor_width() == 11);
  CHECK_THROWS_AS(AugmentationSchema::dataset(false, false, 4), ConfigError);
}

TEST_CASE("policy validation") {
  AugPolicy p;
  CHECK_NOTHROW(p.validate());
  p.flip_p = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.crop_scale_min = 0.8;
  p.crop_scale_max = 0.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.grayscale_p = -0.1;
  Rng rng(1);
  CHECK_THROWS_AS(sample_image_augmentation(rng, p), ConfigError);
}

TEST_CASE("gate frequencies follow the policy") {
  Rng rng(2024);
  const AugPolicy policy;
  const int draws = 10000;
  int flips = 0, jitters = 0, grays = 0;
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_image_augmentation(rng, policy);
    flips += p.applied.flip;
    jitters += p.applied.jitter;
    grays += p.applied.grayscale;
    const double scale = p.crop.h * p.crop.w;
    CHECK(scale >= 0.2 - 1e-12);
    CHECK(scale <= 1.0 + 1e-12);
  }
  CHECK(std::abs(flips / double(draws) - 0.8) <= 0.02);
  CHECK(std::abs(jitters / double(draws) - 0.8) <= 0.02);
  CHECK(std::abs(grays / double(draws) - 0.2) <= 0.02);
}

TEST_CASE("closed gates give the identity record") {
  AugPolicy policy;
  policy.flip_p = policy.jitter_p = policy.grayscale_p = 0.0;
  policy.crop_scale_min = policy.crop_scale_max = 1.0;
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto p = sample_image_augmentation(rng, policy);
    CHECK(p == ImageAugParams::identity());
  }
}

TEST_CASE("sampling is deterministic per seed") {
  Rng a(77), b(77);
  for (int i = 0; i < 100; ++i) CHECK(sample_image_augmentation(a, {}) == sample_image_augmentation(b, {}));
}

TEST_CASE("identity augmentation reproduces the input exactly") {
  std::mt19937_64 gen(1);
  const ImageTensor img = random_image(3, 32, 32, gen);
  CHECK(apply_image_augmentation(img, ImageAugParams::identity(), 32, 32) == img);
}

TEST_CASE("flip is an involution") {
  std::mt19937_64 gen(2);
  const ImageTensor img = random_image(3, 32, 32, gen);
  ImageAugParams p;
  p.flip = 1;
  const ImageTensor once = apply_image_augmentation(img, p, 32, 32);
  CHECK_FALSE(once == img);
  CHECK(once.at(0, 3, 0) == img.at(0, 3, 31));
  CHECK(apply_image_augmentation(once, p, 32, 32) == img);
}

TEST_CASE("grayscale matches an independent luminance oracle") {
  std::mt19937_64 gen(3);
  const ImageTensor img = random_image(3, 16, 16, gen);
  ImageAugParams p;
  p.grayscale = 0;
  const ImageTensor g = apply_image_augmentation(img, p, 16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const double luma = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
      CHECK(g.at(0, y, x) == g.at(1, y, x));
      CHECK(g.at(1, y, x) == g.at(2, y, x));
      CHECK(std::abs(g.at(0, y, x) - luma) < 1e-6);
    }
  }
}

TEST_CASE("apply rejects invalid parameters") {
  const ImageTensor img(3, 8, 8, 0.5f);
  ImageAugParams p;
  p.crop = {0.6, 0.0, 1.0, 0.5};  // right edge at 1.1
  CHECK_THROWS_AS(apply_image_augmentation(img, p, 8, 8), PreconditionError);
  p = {};
  p.jitter.hue = std::nan("");
  CHECK_THROWS_AS(apply_image_augmentation(img, p, 8, 8), PreconditionError);
  p = {};
  p.flip = 2;
  CHECK_THROWS_AS(apply_image_augmentation(img, p, 8, 8), PreconditionError);
}

TEST_CASE("apply is a pure function and clamps to the unit range") {
  std::mt19937_64 gen(4);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const ImageTensor img = random_image(3, 12, 12, gen);
    const ImageAugParams p = i % 2 ? sample_image_augmentation(rng, {}) : random_params(rng);
    const ImageTensor a = apply_image_augmentation(img, p, 10, 10);
    const ImageTensor b = apply_image_augmentation(img, p, 10, 10);
    REQUIRE(a == b);
    CHECK(a.data.minCoeff() >= 0.0f);
    CHECK(a.data.maxCoeff() <= 1.0f);
  }
}

TEST_CASE("encode and decode") {
  const auto schema = AugmentationSchema::standard_image();
  SUBCASE("identity vector") {
    Eigen::VectorXd expected(10);
    expected << 0, 0, 1, 1, 0, 1, 1, 1, 0, 1;
    CHECK(encode_parameters(ImageAugParams::identity(), schema) == expected);
  }
  SUBCASE("flip slot") {
    ImageAugParams p;
    p.flip = 1;
    p.applied.flip = true;
    const Eigen::VectorXd v = encode_parameters(p, schema);
    CHECK(v(4) == 1.0);
    CHECK(v.sum() == encode_parameters(ImageAugParams::identity(), schema).sum() + 1.0);
  }
  SUBCASE("round trip") {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
      const auto p = sample_image_augmentation(rng, {});
      CHECK(decode_image_parameters(encode_parameters(p, schema), schema) == p);
    }
  }
  SUBCASE("schema mismatch") {
    const auto other = AugmentationSchema::dataset(true, false, 2);
    CHECK_THROWS(encode_parameters(ImageAugParams::identity(), other));
    CHECK_THROWS(decode_image_parameters(Eigen::VectorXd::Zero(3), other));
    CHECK_THROWS(decode_image_parameters(Eigen::VectorXd::Zero(9), schema));
  }
}

TEST_CASE("normalize_targets") {
  SUBCASE("two-row column") {
    Eigen::MatrixXd raw(2, 1);
    raw << 0, 1;
    const auto t = normalize_targets(raw);
    CHECK(t.normalized(0, 0) == doctest::Approx(-1.0));
    CHECK(t.normalized(1, 0) == doctest::Approx(1.0));
    CHECK(t.mean(0) == 0.5);
    CHECK(t.std(0) == 0.5);
  }
  SUBCASE("constant column maps to zero") {
    const Eigen::MatrixXd raw = Eigen::MatrixXd::Constant(5, 2, 3.25);
    CHECK(normalize_targets(raw).normalized.isZero(0.0));
  }
  SUBCASE("invariants") {
    std::mt19937_64 gen(10);
    Eigen::MatrixXd raw = random_matrix(32, 10, gen) * 5.0;
    raw.col(4).setConstant(1.0);
    const auto t = normalize_targets(raw);
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      const auto col = t.normalized.col(j);
      CHECK(std::abs(col.mean()) < 1e-6);
      const double sd = std::sqrt((col.array() - col.mean()).square().mean());
      if (j == 4)
        CHECK(sd == 0.0);
      else
        CHECK(std::abs(sd - 1.0) < 1e-6);
    }
  }
  SUBCASE("needs two rows") { CHECK_THROWS_AS(normalize_targets(Eigen::MatrixXd::Ones(1, 3)), PreconditionError); }
}

TEST_CASE("target normalizer splits continuous targets from labels") {
  const auto schema = AugmentationSchema::dataset(true, true, 4);
  Eigen::MatrixXd records(3, 4);
  records << 0.5, -0.2, 0.1, 2,  //
      -0.5, 0.4, 0.3, 0,         //
      0.0, 0.1, -0.9, 3;
  TargetNormalizer norm;
  const auto t = norm(records, schema);
  CHECK(t.raw.cols() == 3);
  CHECK(t.labels.cols() == 1);
  CHECK(t.labels(0, 0) == 2);
  CHECK(t.labels(2, 0) == 3);
  records(1, 3) = 4;
  CHECK_THROWS(norm(records, schema));
}

TEST_CASE("running normalizer accumulates across batches") {
  const auto schema = AugmentationSchema::dataset(true, false, 2);
  std::mt19937_64 gen(12);
  const Eigen::MatrixXd a = random_matrix(6, 3, gen), b = random_matrix(10, 3, gen);
  TargetNormalizer norm(TargetNormalization::running);
  norm(a, schema);
  const auto t = norm(b, schema);
  Eigen::MatrixXd all(16, 3);
  all << a, b;
  const Eigen::RowVectorXd mean = all.colwise().mean();
  CHECK(norm.count() == 16);
  CHECK((t.mean.transpose() - mean).norm() < 1e-12);
  const Eigen::RowVectorXd sd = ((all.rowwise() - mean).colwise().squaredNorm() / 16.0).array().sqrt();
  CHECK((t.std.transpose() - sd).norm() < 1e-12);
}

TEST_CASE("target log rows") {
  const auto schema = AugmentationSchema::standard_image();
  CHECK(target_log_header(schema) ==
        "step,view,sample,crop_x,crop_y,crop_h,crop_w,flip,brightness,contrast,saturation,hue,grayscale");
  std::ostringstream out;
  write_target_row(out, 3, 2, 17, encode_parameters(ImageAugParams::identity(), schema));
  CHECK(out.str() == "3,2,17,0,0,1,1,0,1,1,1,0,1\n");
}
