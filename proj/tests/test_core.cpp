#include "ciper/checkpoint.hpp"
#include "ciper/config.hpp"
#include "ciper/optim.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <fstream>

using namespace ciper;
using ciper::test::TempDir;

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 0.03) == doctest::Approx(0.03));
  CHECK(cosine_lr(50, 100, 0.03) == doctest::Approx(0.015));
  CHECK(cosine_lr(25, 100, 1.0) == doctest::Approx(0.5 * (1.0 + std::sqrt(0.5))));
  CHECK(cosine_lr(100, 100, 0.03) == 0.0);
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.03), PreconditionError);
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.03), PreconditionError);
}

TEST_CASE("step decay schedule") {
  CHECK(step_decay_lr(0, 1.0, 3.33, 10) == 1.0);
  CHECK(step_decay_lr(9, 1.0, 3.33, 10) == 1.0);
  CHECK(step_decay_lr(10, 1.0, 3.33, 10) == doctest::Approx(1.0 / 3.33));
  CHECK(step_decay_lr(29, 1.0, 3.33, 10) == doctest::Approx(1.0 / (3.33 * 3.33)));
  CHECK_THROWS_AS(step_decay_lr(1, 1.0, 3.33, 0), PreconditionError);
}

TEST_CASE("sgd updates match hand-computed values") {
  nn::Param<double> p("w", Eigen::MatrixXd::Constant(1, 1, 1.0));
  std::vector<nn::Param<double>*> params{&p};
  SUBCASE("heavy ball with weight decay") {
    Sgd<double> opt({0.9, 0.1, false});
    p.grad(0, 0) = 0.5;
    opt.step(params, 0.1);
    CHECK(p.value(0, 0) == doctest::Approx(0.94));
    opt.step(params, 0.1);
    CHECK(p.value(0, 0) == doctest::Approx(0.8266));
  }
  SUBCASE("nesterov") {
    Sgd<double> opt({0.9, 0.0, true});
    p.grad(0, 0) = 0.5;
    opt.step(params, 0.1);
    CHECK(p.value(0, 0) == doctest::Approx(0.905));
    opt.step(params, 0.1);
    CHECK(p.value(0, 0) == doctest::Approx(0.7695));
  }
  SUBCASE("plain gradient descent") {
    Sgd<double> opt({0.0, 0.0, false});
    p.grad(0, 0) = -2.0;
    opt.step(params, 0.25);
    CHECK(p.value(0, 0) == 1.5);
    CHECK(opt.momentum_buffers().empty());
  }
}

TEST_CASE("config parsing") {
  const Config c = Config::parse(R"(# comment
top = 1
[train]
alpha = 0.5   ; trailing comment
epochs=3
tags = a, b ,c
flag = yes

[model]
widths = 8,16
)");
  CHECK(c.get_int("top", 0) == 1);
  CHECK(c.get_double("train.alpha", 0) == 0.5);
  CHECK(c.get_int("train.epochs", 0) == 3);
  CHECK(c.get_bool("train.flag", false));
  CHECK(c.get_string_list("train.tags", {}) == std::vector<std::string>{"a", "b", "c"});
  CHECK(c.get_int_list("model.widths", {}) == std::vector<int>{8, 16});
  CHECK(c.get_double("train.missing", 7.5) == 7.5);
  CHECK_THROWS_AS(c.get_int("train.alpha", 0), ConfigError);
  CHECK_THROWS_AS(c.get_bool("train.epochs", false) && c.get_bool("train.tags", false), ConfigError);
  CHECK_THROWS_AS(c.require_known({"top", "train.alpha"}), ConfigError);

  CHECK_THROWS_AS(Config::parse("[train\nx=1"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a]\nx\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a]\nx=1\nx=2\n"), ConfigError);
  CHECK_THROWS_AS(Config::load("/nonexistent/file.cfg"), ConfigError);

  Config o = c;
  o.set_assignment("train.alpha = 2");
  CHECK(o.get_double("train.alpha", 0) == 2.0);
  CHECK_THROWS_AS(o.set_assignment("novalue"), ConfigError);
  CHECK(Config::parse(c.dump()).entries() == c.entries());
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 2.5e-7, 3.0, -0.03}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("train config round trip and validation") {
  TrainConfig tc = test::tiny_config();
  tc.alpha = 0.25;
  tc.seed = 42;
  const TrainConfig back = train_config_from(to_config(tc));
  CHECK(to_config(back).dump() == to_config(tc).dump());
  CHECK(back.alpha == 0.25);
  CHECK(back.seed == 42);
  CHECK(back.encoder.widths == tc.encoder.widths);

  Config bad = to_config(tc);
  bad.set("train.alphaa", "1");
  CHECK_THROWS_AS(train_config_from(bad), ConfigError);
  Config neg = to_config(tc);
  neg.set("train.alpha", "-1");
  CHECK_THROWS_AS(train_config_from(neg), ConfigError);
  Config obj = to_config(tc);
  obj.set("train.objective", "byol");
  CHECK_THROWS_AS(train_config_from(obj), ConfigError);
}

TEST_CASE("prediction weight per objective") {
  TrainConfig tc;
  tc.alpha = 0.5;
  CHECK(tc.prediction_weight() == 0.5);
  tc.objective = Objective::contrastive;
  CHECK(tc.prediction_weight() == 0.0);
  tc.objective = Objective::predictive;
  CHECK(tc.prediction_weight() == 1.0);
}

namespace {

EncoderSpec small_encoder() {
  EncoderSpec e;
  e.widths = {4, 8};
  e.output_dim = 8;
  return e;
}

HeadSpec small_heads() {
  HeadSpec h;
  h.projector_hidden = 16;
  h.z_dim = 8;
  h.predictor_hidden = 8;
  h.predictor_out = 7;
  return h;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  TempDir tmp("ckpt");
  CiperModel<float> a(small_encoder(), small_heads(), 1);
  Sgd<float> opt;
  for (auto* p : a.parameters()) p->grad.setConstant(0.01f);
  opt.step(a.parameters(), 0.1);
  for (auto& b : a.buffers()) b.value->setConstant(0.3f);
  TargetNormalizer norm(TargetNormalization::running);
  norm.restore(5.0, Eigen::VectorXd::Constant(3, 0.5), Eigen::VectorXd::Constant(3, 2.0));

  CheckpointInfo info;
  info.epoch = 3;
  info.step = 96;
  info.config_text = "[train]\nalpha = 1\n";
  save_checkpoint(tmp / "a.ckpt", a, &opt, &norm, info);

  const CheckpointInfo header = read_checkpoint_info(tmp / "a.ckpt");
  CHECK(header.epoch == 3);
  CHECK(header.step == 96);
  CHECK(header.config_text == info.config_text);
  CHECK(header.encoder_spec.widths == std::vector<int>{4, 8});

  CiperModel<float> b(small_encoder(), small_heads(), 2);
  Sgd<float> opt_b;
  TargetNormalizer norm_b(TargetNormalization::running);
  load_checkpoint(tmp / "a.ckpt", b, &opt_b, &norm_b);
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  for (auto& buf : b.buffers()) CHECK(buf.value->isConstant(0.3f));
  CHECK(opt_b.momentum_buffers() == opt.momentum_buffers());
  CHECK(norm_b.count() == 5.0);
  CHECK(norm_b.running_m2() == norm.running_m2());

  const auto loaded = load_model(tmp / "a.ckpt");
  CHECK(loaded->encoder_spec.output_dim == 8);
  CHECK(loaded->parameters()[0]->value == pa[0]->value);
}

TEST_CASE("checkpoint errors") {
  TempDir tmp("ckpt_bad");
  CiperModel<float> a(small_encoder(), small_heads(), 1);
  save_checkpoint(tmp / "a.ckpt", a, nullptr, nullptr, {});
  EncoderSpec other = small_encoder();
  other.output_dim = 9;
  CiperModel<float> b(other, small_heads(), 1);
  CHECK_THROWS_AS(load_checkpoint(tmp / "a.ckpt", b, nullptr, nullptr), ShapeError);
  {
    std::ofstream out(tmp / "bad.ckpt", std::ios::binary);
    out << "NOTACKPT and some more bytes";
  }
  CHECK_THROWS_AS(read_checkpoint_info(tmp / "bad.ckpt"), MalformedFileError);
  CHECK_THROWS(read_checkpoint_info(tmp / "missing.ckpt"));
}
