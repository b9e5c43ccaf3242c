#include "ciper/checkpoint.hpp"
#include "ciper/trainer.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace ciper;
using ciper::test::TempDir;
using ciper::test::tiny_config;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<const LabeledSample*> first_n(const std::vector<LabeledSample>& samples, size_t n) {
  std::vector<const LabeledSample*> out;
  for (size_t i = 0; i < n; ++i) out.push_back(&samples[i]);
  return out;
}

HeadSpec heads_for(const TrainConfig& tc, const AugmentationSchema& schema) {
  return {tc.projector_hidden, tc.z_dim, tc.predictor_hidden, schema.predictor_width()};
}

}  // namespace

TEST_CASE("epoch batching") {
  using B = std::vector<std::pair<int, int>>;
  CHECK(epoch_batches(10, 4) == B{{0, 4}, {4, 8}, {8, 10}});
  CHECK(epoch_batches(9, 4) == B{{0, 4}, {4, 9}});
  CHECK(epoch_batches(8, 4) == B{{0, 4}, {4, 8}});
  CHECK(epoch_batches(3, 4) == B{{0, 3}});
  CHECK(epoch_batches(2000, 64).size() == 32);
  CHECK_THROWS_AS(epoch_batches(10, 1), PreconditionError);
}

TEST_CASE("assemble_batch") {
  TrainConfig tc = tiny_config();
  const TrainingData data = load_training_data(tc.data);
  const auto members = first_n(data.train, 4);

  SUBCASE("image augmentations record one row per view and sample") {
    tc.aug_mode = AugMode::image;
    const auto schema = schema_for(tc, data);
    TargetNormalizer norm;
    const auto b = assemble_batch(members, AugMode::image, schema, tc.policy, nullptr, 99, norm);
    CHECK(b.size() == 4);
    CHECK(b.records1.rows() == 4);
    CHECK(b.records1.cols() == 10);
    CHECK(b.records2.cols() == 10);
    CHECK(b.anchors[2] == data.train[2].image);
    for (int i = 0; i < 4; ++i) {
      const auto p = decode_image_parameters(b.records1.row(i).transpose(), schema);
      CHECK(b.view1[i] == apply_image_augmentation(data.train[i].image, p, 16, 16));
    }
    TargetNormalizer norm2;
    const auto again = assemble_batch(members, AugMode::image, schema, tc.policy, nullptr, 99, norm2);
    CHECK(again.records1 == b.records1);
    CHECK(again.view2[3] == b.view2[3]);
    const auto other = assemble_batch(members, AugMode::image, schema, tc.policy, nullptr, 100, norm2);
    CHECK(other.records1 != b.records1);
  }
  SUBCASE("dataset augmentations") {
    const auto schema = schema_for(tc, data);
    CHECK(schema.record_width() == 4);
    TargetNormalizer norm;
    const auto b = assemble_batch(members, AugMode::dataset, schema, tc.policy, &*data.renderer, 5, norm);
    CHECK(b.records1.cols() == 4);
    CHECK(b.targets1.raw.cols() == 3);
    CHECK(b.targets1.labels.cols() == 1);
    CHECK_THROWS_AS(assemble_batch(members, AugMode::dataset, schema, tc.policy, nullptr, 5, norm), PreconditionError);
    CHECK_THROWS_AS(assemble_batch(first_n(data.train, 1), AugMode::dataset, schema, tc.policy, &*data.renderer, 5, norm),
                    PreconditionError);
  }
}

TEST_CASE("train_step losses and encoder traffic") {
  TrainConfig tc = tiny_config();
  const TrainingData data = load_training_data(tc.data);
  const auto schema = schema_for(tc, data);
  const auto members = first_n(data.train, 8);
  TargetNormalizer norm;
  const auto batch = assemble_batch(members, tc.aug_mode, schema, tc.policy, &*data.renderer, 1, norm);
  const double bound = std::log(2.0 * 8 - 1.0);

  for (Objective obj : {Objective::ciper, Objective::contrastive, Objective::predictive}) {
    tc.objective = obj;
    CiperModel<float> model(tc.encoder, heads_for(tc, schema), 3);
    Sgd<float> opt;
    const auto r = train_step(model, opt, batch, tc, schema, 0.03);
    CAPTURE(to_string(obj));
    CHECK(r.encoder_images == (obj == Objective::contrastive ? 16 : 24));
    CHECK(std::isfinite(r.report.total));
    if (obj != Objective::predictive) {
      CHECK(r.report.l_c > 0.0);
      CHECK(r.report.l_c < bound + 0.5);
    }
    if (obj == Objective::ciper) CHECK(r.report.total == doctest::Approx(r.report.l_c + r.report.l_p));
    if (obj == Objective::contrastive) CHECK(r.report.total == r.report.l_c);
    if (obj == Objective::predictive) CHECK(r.report.total == r.report.l_p);
  }
}

TEST_CASE("gradient clipping caps the global norm") {
  TrainConfig tc = tiny_config();
  const TrainingData data = load_training_data(tc.data);
  const auto schema = schema_for(tc, data);
  TargetNormalizer norm;
  const auto batch = assemble_batch(first_n(data.train, 8), tc.aug_mode, schema, tc.policy, &*data.renderer, 1, norm);
  auto global_norm = [](CiperModel<float>& m) {
    double sq = 0.0;
    for (auto* p : m.parameters()) sq += p->grad.cast<double>().squaredNorm();
    return std::sqrt(sq);
  };

  tc.grad_clip = 0.0;
  CiperModel<float> free_model(tc.encoder, heads_for(tc, schema), 3);
  Sgd<float> opt_free;
  const auto unclipped = train_step(free_model, opt_free, batch, tc, schema, 0.03);
  CHECK(unclipped.grad_norm > 0.0);
  CHECK(global_norm(free_model) == doctest::Approx(unclipped.grad_norm).epsilon(1e-5));

  tc.grad_clip = unclipped.grad_norm / 4.0;
  CiperModel<float> capped(tc.encoder, heads_for(tc, schema), 3);
  Sgd<float> opt_capped;
  const auto clipped = train_step(capped, opt_capped, batch, tc, schema, 0.03);
  CHECK(clipped.grad_norm == doctest::Approx(unclipped.grad_norm).epsilon(1e-5));
  CHECK(global_norm(capped) == doctest::Approx(tc.grad_clip).epsilon(1e-5));

  tc.grad_clip = -1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("alpha zero follows the contrastive trajectory") {
  TrainConfig tc = tiny_config();
  const TrainingData data = load_training_data(tc.data);
  const auto schema = schema_for(tc, data);
  TrainConfig zero = tc, contrastive = tc;
  zero.alpha = 0.0;
  contrastive.objective = Objective::contrastive;
  CiperModel<float> a(tc.encoder, heads_for(tc, schema), 7), b(tc.encoder, heads_for(tc, schema), 7);
  Sgd<float> opt_a, opt_b;
  TargetNormalizer norm;
  const auto members = first_n(data.train, 8);
  double max_diff = 0.0;
  for (int step = 0; step < 50; ++step) {
    const auto batch = assemble_batch(members, tc.aug_mode, schema, tc.policy, &*data.renderer, step, norm);
    train_step(a, opt_a, batch, zero, schema, 0.03);
    train_step(b, opt_b, batch, contrastive, schema, 0.03);
    std::vector<nn::Param<float>*> pa, pb;
    a.encoder.parameters(pa);
    b.encoder.parameters(pb);
    for (size_t i = 0; i < pa.size(); ++i)
      max_diff = std::max(max_diff, double((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff()));
  }
  CHECK(max_diff <= 1e-6);
}

TEST_CASE("training runs are reproducible and resumable") {
  TrainConfig tc = tiny_config();
  tc.epochs = 2;
  const TrainingData data = load_training_data(tc.data);
  TempDir full("train_full"), again("train_again"), part("train_part"), resumed("train_resumed");

  const auto r = run_training(tc, data, full.path());
  const auto rows = lines_of(slurp(r.metrics_log));
  const int steps_per_epoch = static_cast<int>(epoch_batches(static_cast<int>(data.train.size()), tc.batch_size).size());
  CHECK(rows.size() == 1u + 2u * steps_per_epoch);
  CHECK(r.checkpoints.size() == 2);
  CHECK(std::filesystem::exists(full / "checkpoints/epoch_0001.ckpt"));
  CHECK(std::filesystem::exists(full / "config.cfg"));
  CHECK(std::filesystem::exists(full / "targets.csv"));

  run_training(tc, data, again.path());
  CHECK(slurp(full / "metrics.csv") == slurp(again / "metrics.csv"));
  CHECK(slurp(full / "final.ckpt") == slurp(again / "final.ckpt"));

  RunOptions stop;
  stop.stop_after_epochs = 1;
  run_training(tc, data, part.path(), stop);
  RunOptions resume;
  resume.resume_from = part / "checkpoints/epoch_0001.ckpt";
  run_training(tc, data, resumed.path(), resume);
  const auto resumed_rows = lines_of(slurp(resumed / "metrics.csv"));
  REQUIRE(resumed_rows.size() == 1u + steps_per_epoch);
  for (int i = 0; i < steps_per_epoch; ++i) CHECK(resumed_rows[1 + i] == rows[1 + steps_per_epoch + i]);
  CHECK(slurp(full / "final.ckpt") == slurp(resumed / "final.ckpt"));
}

TEST_CASE("non-finite losses abort with a dump") {
  TrainConfig tc = tiny_config();
  tc.base_lr = 1e30;
  const TrainingData data = load_training_data(tc.data);
  TempDir tmp("train_nan");
  bool thrown = false;
  try {
    run_training(tc, data, tmp.path());
  } catch (const NonFiniteLossError& e) {
    thrown = true;
    CHECK(std::filesystem::exists(e.dump_path));
    CHECK(slurp(e.dump_path).find("sample_ids:") != std::string::npos);
  }
  CHECK(thrown);
  CHECK_FALSE(std::filesystem::exists(tmp / "final.ckpt"));
}

TEST_CASE("two-epoch smoke run on the default dataset") {
  TrainConfig tc;
  tc.epochs = 2;
  tc.log_targets = false;
  const TrainingData data = load_training_data(tc.data);
  CHECK(data.train.size() == 2000);
  CHECK(data.test.size() == 1008);
  TempDir tmp("train_smoke");
  const auto r = run_training(tc, data, tmp.path());
  const auto rows = lines_of(slurp(r.metrics_log));
  CHECK(rows.size() == 1u + 2u * 32u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 32; ++i) {
    first += r.history[static_cast<size_t>(i)].total / 32.0;
    last += r.history[static_cast<size_t>(32 + i)].total / 32.0;
  }
  CHECK(last < first);
}
