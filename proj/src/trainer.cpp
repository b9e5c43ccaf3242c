#include "ciper/trainer.hpp"

#include "ciper/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace ciper {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::ciper: return "ciper";
    case Objective::contrastive: return "contrastive";
    default: return "predictive";
  }
}
std::string to_string(AugMode m) { return m == AugMode::image ? "image" : "dataset"; }
std::string to_string(DatasetAug d) {
  switch (d) {
    case DatasetAug::viewpoint: return "viewpoint";
    case DatasetAug::session: return "session";
    default: return "both";
  }
}

namespace {

Objective objective_from(const std::string& s) {
  if (s == "ciper") return Objective::ciper;
  if (s == "contrastive") return Objective::contrastive;
  if (s == "predictive") return Objective::predictive;
  throw ConfigError("train.objective: unknown value '" + s + "'");
}
AugMode aug_mode_from(const std::string& s) {
  if (s == "image") return AugMode::image;
  if (s == "dataset") return AugMode::dataset;
  throw ConfigError("augment.mode: unknown value '" + s + "'");
}
DatasetAug dataset_aug_from(const std::string& s) {
  if (s == "viewpoint") return DatasetAug::viewpoint;
  if (s == "session") return DatasetAug::session;
  if (s == "both") return DatasetAug::both;
  throw ConfigError("augment.dataset_aug: unknown value '" + s + "'");
}
TargetNormalization normalization_from(const std::string& s) {
  if (s == "per_batch") return TargetNormalization::per_batch;
  if (s == "running") return TargetNormalization::running;
  throw ConfigError("train.target_normalization: unknown value '" + s + "'");
}

constexpr double kDegree = kPi / 180.0;

}  // namespace

std::vector<std::string> train_config_keys() {
  return {"train.objective",       "train.alpha",          "train.tau",
          "train.base_lr",         "train.weight_decay",   "train.momentum",       "train.grad_clip",
          "train.epochs",          "train.batch_size",     "train.seed",
          "train.target_normalization", "train.checkpoint_every", "train.log_targets",
          "model.encoder",         "model.output_dim",     "model.widths",
          "model.projector_hidden", "model.z_dim",         "model.predictor_hidden",
          "augment.mode",          "augment.dataset_aug",  "augment.crop_p",
          "augment.crop_scale_min", "augment.crop_scale_max", "augment.crop_ratio_min",
          "augment.crop_ratio_max", "augment.flip_p",      "augment.jitter_p",
          "augment.brightness",    "augment.contrast",     "augment.saturation",
          "augment.hue",           "augment.grayscale_p",  "data.kind",
          "data.num_objects",      "data.num_sessions",    "data.train_sessions",
          "data.samples_per_cell", "data.test_samples_per_cell", "data.image_size",
          "data.seed",             "data.d_min",           "data.d_max",
          "data.delta_azimuth_deg", "data.delta_elevation_deg", "data.delta_distance",
          "data.report_post_clamp", "data.cifar_train",    "data.cifar_test",
          "data.cifar_limit"};
}

TrainConfig train_config_from(const Config& cfg) {
  const auto known = train_config_keys();
  for (const auto& [key, value] : cfg.entries()) {
    const auto section = key.substr(0, key.find('.'));
    if ((section == "train" || section == "model" || section == "augment" || section == "data") &&
        std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key '" + key + "'");
  }
  TrainConfig tc;
  tc.objective = objective_from(cfg.get_string("train.objective", to_string(tc.objective)));
  tc.alpha = cfg.get_double("train.alpha", tc.alpha);
  tc.tau = cfg.get_double("train.tau", tc.tau);
  tc.base_lr = cfg.get_double("train.base_lr", tc.base_lr);
  tc.weight_decay = cfg.get_double("train.weight_decay", tc.weight_decay);
  tc.momentum = cfg.get_double("train.momentum", tc.momentum);
  tc.grad_clip = cfg.get_double("train.grad_clip", tc.grad_clip);
  tc.epochs = static_cast<int>(cfg.get_int("train.epochs", tc.epochs));
  tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size", tc.batch_size));
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<long long>(tc.seed)));
  tc.target_normalization = normalization_from(cfg.get_string("train.target_normalization", "per_batch"));
  tc.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every", tc.checkpoint_every));
  tc.log_targets = cfg.get_bool("train.log_targets", tc.log_targets);

  tc.encoder.variant = encoder_variant_from_string(cfg.get_string("model.encoder", to_string(tc.encoder.variant)));
  tc.encoder.output_dim = static_cast<int>(cfg.get_int("model.output_dim", tc.encoder.output_dim));
  tc.encoder.widths = cfg.get_int_list("model.widths", tc.encoder.widths);
  tc.projector_hidden = static_cast<int>(cfg.get_int("model.projector_hidden", tc.projector_hidden));
  tc.z_dim = static_cast<int>(cfg.get_int("model.z_dim", tc.z_dim));
  tc.predictor_hidden = static_cast<int>(cfg.get_int("model.predictor_hidden", tc.predictor_hidden));

  tc.aug_mode = aug_mode_from(cfg.get_string("augment.mode", to_string(tc.aug_mode)));
  tc.dataset_aug = dataset_aug_from(cfg.get_string("augment.dataset_aug", to_string(tc.dataset_aug)));
  auto& p = tc.policy;
  p.crop_p = cfg.get_double("augment.crop_p", p.crop_p);
  p.crop_scale_min = cfg.get_double("augment.crop_scale_min", p.crop_scale_min);
  p.crop_scale_max = cfg.get_double("augment.crop_scale_max", p.crop_scale_max);
  p.crop_ratio_min = cfg.get_double("augment.crop_ratio_min", p.crop_ratio_min);
  p.crop_ratio_max = cfg.get_double("augment.crop_ratio_max", p.crop_ratio_max);
  p.flip_p = cfg.get_double("augment.flip_p", p.flip_p);
  p.jitter_p = cfg.get_double("augment.jitter_p", p.jitter_p);
  p.brightness = cfg.get_double("augment.brightness", p.brightness);
  p.contrast = cfg.get_double("augment.contrast", p.contrast);
  p.saturation = cfg.get_double("augment.saturation", p.saturation);
  p.hue = cfg.get_double("augment.hue", p.hue);
  p.grayscale_p = cfg.get_double("augment.grayscale_p", p.grayscale_p);

  auto& d = tc.data;
  auto& s = d.scene;
  d.kind = cfg.get_string("data.kind", d.kind);
  s.num_objects = static_cast<int>(cfg.get_int("data.num_objects", s.num_objects));
  s.num_sessions = static_cast<int>(cfg.get_int("data.num_sessions", s.num_sessions));
  s.train_sessions = cfg.get_int_list("data.train_sessions", s.train_sessions);
  s.samples_per_cell = static_cast<int>(cfg.get_int("data.samples_per_cell", s.samples_per_cell));
  s.test_samples_per_cell = static_cast<int>(cfg.get_int("data.test_samples_per_cell", s.test_samples_per_cell));
  s.image_size = static_cast<int>(cfg.get_int("data.image_size", s.image_size));
  s.seed = static_cast<std::uint64_t>(cfg.get_int("data.seed", static_cast<long long>(s.seed)));
  s.d_min = cfg.get_double("data.d_min", s.d_min);
  s.d_max = cfg.get_double("data.d_max", s.d_max);
  s.delta_azimuth = cfg.get_double("data.delta_azimuth_deg", s.delta_azimuth / kDegree) * kDegree;
  s.delta_elevation = cfg.get_double("data.delta_elevation_deg", s.delta_elevation / kDegree) * kDegree;
  s.delta_distance = cfg.get_double("data.delta_distance", s.delta_distance);
  s.report_post_clamp = cfg.get_bool("data.report_post_clamp", s.report_post_clamp);
  d.cifar_train = cfg.get_string_list("data.cifar_train", d.cifar_train);
  d.cifar_test = cfg.get_string("data.cifar_test", d.cifar_test);
  d.cifar_limit = static_cast<int>(cfg.get_int("data.cifar_limit", d.cifar_limit));
  tc.validate();
  return tc;
}

Config to_config(const TrainConfig& tc) {
  Config c;
  c.set("train.objective", to_string(tc.objective));
  c.set("train.alpha", format_double(tc.alpha));
  c.set("train.tau", format_double(tc.tau));
  c.set("train.base_lr", format_double(tc.base_lr));
  c.set("train.weight_decay", format_double(tc.weight_decay));
  c.set("train.momentum", format_double(tc.momentum));
  c.set("train.grad_clip", format_double(tc.grad_clip));
  c.set("train.epochs", std::to_string(tc.epochs));
  c.set("train.batch_size", std::to_string(tc.batch_size));
  c.set("train.seed", std::to_string(tc.seed));
  c.set("train.target_normalization",
        tc.target_normalization == TargetNormalization::per_batch ? "per_batch" : "running");
  c.set("train.checkpoint_every", std::to_string(tc.checkpoint_every));
  c.set("train.log_targets", tc.log_targets ? "true" : "false");
  c.set("model.encoder", to_string(tc.encoder.variant));
  c.set("model.output_dim", std::to_string(tc.encoder.output_dim));
  c.set("model.widths", join_list(tc.encoder.widths));
  c.set("model.projector_hidden", std::to_string(tc.projector_hidden));
  c.set("model.z_dim", std::to_string(tc.z_dim));
  c.set("model.predictor_hidden", std::to_string(tc.predictor_hidden));
  c.set("augment.mode", to_string(tc.aug_mode));
  c.set("augment.dataset_aug", to_string(tc.dataset_aug));
  const auto& p = tc.policy;
  c.set("augment.crop_p", format_double(p.crop_p));
  c.set("augment.crop_scale_min", format_double(p.crop_scale_min));
  c.set("augment.crop_scale_max", format_double(p.crop_scale_max));
  c.set("augment.crop_ratio_min", format_double(p.crop_ratio_min));
  c.set("augment.crop_ratio_max", format_double(p.crop_ratio_max));
  c.set("augment.flip_p", format_double(p.flip_p));
  c.set("augment.jitter_p", format_double(p.jitter_p));
  c.set("augment.brightness", format_double(p.brightness));
  c.set("augment.contrast", format_double(p.contrast));
  c.set("augment.saturation", format_double(p.saturation));
  c.set("augment.hue", format_double(p.hue));
  c.set("augment.grayscale_p", format_double(p.grayscale_p));
  const auto& d = tc.data;
  const auto& s = d.scene;
  c.set("data.kind", d.kind);
  c.set("data.num_objects", std::to_string(s.num_objects));
  c.set("data.num_sessions", std::to_string(s.num_sessions));
  c.set("data.train_sessions", join_list(s.train_sessions));
  c.set("data.samples_per_cell", std::to_string(s.samples_per_cell));
  c.set("data.test_samples_per_cell", std::to_string(s.test_samples_per_cell));
  c.set("data.image_size", std::to_string(s.image_size));
  c.set("data.seed", std::to_string(s.seed));
  c.set("data.d_min", format_double(s.d_min));
  c.set("data.d_max", format_double(s.d_max));
  c.set("data.delta_azimuth_deg", format_double(s.delta_azimuth / kDegree));
  c.set("data.delta_elevation_deg", format_double(s.delta_elevation / kDegree));
  c.set("data.delta_distance", format_double(s.delta_distance));
  c.set("data.report_post_clamp", s.report_post_clamp ? "true" : "false");
  c.set("data.cifar_train", join_list(d.cifar_train));
  c.set("data.cifar_test", d.cifar_test);
  c.set("data.cifar_limit", std::to_string(d.cifar_limit));
  return c;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("train.alpha must be non-negative");
  if (!(tau > 0.0)) throw ConfigError("train.tau must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be positive");
  if (!(weight_decay >= 0.0) || !(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("train: weight_decay must be >= 0 and momentum in [0,1)");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be >= 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (data.kind != "synthetic" && data.kind != "cifar") throw ConfigError("data.kind must be synthetic or cifar");
  if (data.kind == "cifar" && aug_mode == AugMode::dataset)
    throw ConfigError("dataset augmentations need the synthetic scene data");
  encoder.validate();
  policy.validate();
  if (data.kind == "synthetic") data.scene.validate();
}

double TrainConfig::prediction_weight() const {
  switch (objective) {
    case Objective::ciper: return alpha;
    case Objective::contrastive: return 0.0;
    default: return 1.0;
  }
}

TrainingData load_training_data(const DataConfig& cfg) {
  TrainingData data;
  if (cfg.kind == "synthetic") {
    Dataset ds = build_dataset(cfg.scene);
    data.train = std::move(ds.train);
    data.test = std::move(ds.test);
    data.renderer.emplace(cfg.scene);
    data.num_objects = cfg.scene.num_objects;
    data.num_sessions = cfg.scene.num_sessions;
    return data;
  }
  if (cfg.kind != "cifar") throw ConfigError("data.kind must be synthetic or cifar");
  if (cfg.cifar_train.empty()) throw ConfigError("data.cifar_train lists no files");
  for (const auto& path : cfg.cifar_train) {
    auto part = parse_cifar_binary(path);
    for (auto& s : part) {
      s.id = static_cast<std::int64_t>(data.train.size());
      data.train.push_back(std::move(s));
      if (cfg.cifar_limit > 0 && static_cast<int>(data.train.size()) >= cfg.cifar_limit) break;
    }
    if (cfg.cifar_limit > 0 && static_cast<int>(data.train.size()) >= cfg.cifar_limit) break;
  }
  if (!cfg.cifar_test.empty()) {
    data.test = parse_cifar_binary(cfg.cifar_test);
    for (auto& s : data.test) s.id += static_cast<std::int64_t>(data.train.size());
  }
  data.num_objects = 10;
  data.num_sessions = 1;
  return data;
}

AugmentationSchema schema_for(const TrainConfig& tc, const TrainingData& data) {
  if (tc.aug_mode == AugMode::image) return AugmentationSchema::standard_image();
  if (!data.renderer) throw ConfigError("dataset augmentations need the synthetic scene data");
  return AugmentationSchema::dataset(tc.dataset_aug != DatasetAug::session, tc.dataset_aug != DatasetAug::viewpoint,
                                     data.num_sessions);
}

TrainingBatch assemble_batch(std::span<const LabeledSample* const> samples, AugMode mode,
                             const AugmentationSchema& schema, const AugPolicy& policy,
                             const SceneRenderer* renderer, std::uint64_t batch_seed, TargetNormalizer& normalizer) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (n < 2) throw PreconditionError("assemble_batch: need at least 2 samples");
  if (mode == AugMode::dataset && !renderer) throw PreconditionError("assemble_batch: dataset mode needs a renderer");
  TrainingBatch b;
  b.records1.resize(n, schema.record_width());
  b.records2.resize(n, schema.record_width());
  for (Eigen::Index i = 0; i < n; ++i) {
    const LabeledSample& s = *samples[static_cast<size_t>(i)];
    Rng rng(derive_seed(batch_seed, static_cast<std::uint64_t>(i)));
    b.sample_ids.push_back(s.id);
    b.anchors.push_back(s.image);
    if (mode == AugMode::image) {
      for (int v = 0; v < 2; ++v) {
        const ImageAugParams p = sample_image_augmentation(rng, policy);
        (v == 0 ? b.view1 : b.view2).push_back(apply_image_augmentation(s.image, p, s.image.height, s.image.width));
        (v == 0 ? b.records1 : b.records2).row(i) = encode_parameters(p, schema).transpose();
      }
    } else {
      for (int v = 0; v < 2; ++v) {
        DatasetAugResult r = dataset_augment(*renderer, s, rng, schema);
        (v == 0 ? b.view1 : b.view2).push_back(std::move(r.image));
        (v == 0 ? b.records1 : b.records2).row(i) = r.record.transpose();
      }
    }
  }
  b.targets1 = normalizer(b.records1, schema);
  b.targets2 = normalizer(b.records2, schema);
  return b;
}

namespace {

std::vector<ImageTensor> encoded(const std::vector<ImageTensor>& a, const std::vector<ImageTensor>* b = nullptr) {
  std::vector<ImageTensor> out;
  out.reserve(a.size() * (b ? 2 : 1));
  for (const auto& img : a) out.push_back(positional_encode(img));
  if (b)
    for (const auto& img : *b) out.push_back(positional_encode(img));
  return out;
}

}  // namespace

StepResult train_step(CiperModel<float>& model, Sgd<float>& optimizer, const TrainingBatch& batch,
                      const TrainConfig& config, const AugmentationSchema& schema, double lr) {
  const Eigen::Index n = batch.size();
  if (n < 2 || static_cast<Eigen::Index>(batch.view1.size()) != n || static_cast<Eigen::Index>(batch.view2.size()) != n)
    throw ShapeError("train_step: inconsistent batch");
  const bool use_contrastive = config.objective != Objective::predictive;
  const bool use_prediction = config.objective != Objective::contrastive;
  const double pred_weight = config.prediction_weight();

  StepResult result;
  model.zero_grad();

  // Both views go through the encoder as one 2N batch; anchors separately.
  const auto views = encoded(batch.view1, &batch.view2);
  nn::Cache<float> view_cache;
  const nn::Activation<float> hv = model.encoder.forward(to_activation<float>(views), nn::Mode::train, view_cache);
  result.encoder_images += static_cast<int>(2 * n);
  Matrix<float> dhv = Matrix<float>::Zero(hv.data.rows(), hv.data.cols());

  double l_c = 0.0;
  double l_p = 0.0;
  if (use_contrastive) {
    nn::Cache<float> cache;
    const auto z = model.projector.forward(hv, nn::Mode::train, cache);
    const Matrix<double> zd = z.data.cast<double>();
    if (!zd.allFinite()) throw NonFiniteLossError("non-finite projection output", -1, "");
    const auto nce = info_nce<double>(zd.topRows(n), zd.bottomRows(n), config.tau);
    l_c = nce.loss;
    Matrix<float> dz(2 * n, z.data.cols());
    dz << nce.grad_z1.cast<float>(), nce.grad_z2.cast<float>();
    dhv = model.projector.backward(nn::dense(std::move(dz)), cache).data;
  }

  nn::Cache<float> anchor_cache;
  Matrix<float> dha;
  if (use_prediction) {
    const auto anchors = encoded(batch.anchors);
    const nn::Activation<float> ha =
        model.encoder.forward(to_activation<float>(anchors), nn::Mode::train, anchor_cache);
    result.encoder_images += static_cast<int>(n);
    Matrix<float> diff(2 * n, ha.data.cols());
    diff << ha.data - hv.data.topRows(n), ha.data - hv.data.bottomRows(n);
    nn::Cache<float> cache;
    const auto pred = model.predictor.forward(nn::dense(std::move(diff)), nn::Mode::train, cache);
    const Matrix<double> pd = pred.data.cast<double>();
    if (!pd.allFinite()) throw NonFiniteLossError("non-finite predictor output", -1, "");
    const auto pl = predictive_loss<double>(pd.topRows(n), pd.bottomRows(n), batch.targets1, batch.targets2, schema);
    l_p = pl.loss;
    if (pred_weight > 0.0) {
      Matrix<float> dpred(2 * n, pred.data.cols());
      dpred << (pred_weight * pl.grad_pred1).cast<float>(), (pred_weight * pl.grad_pred2).cast<float>();
      const Matrix<float> dd = model.predictor.backward(nn::dense(std::move(dpred)), cache).data;
      dha = dd.topRows(n) + dd.bottomRows(n);
      dhv.topRows(n) -= dd.topRows(n);
      dhv.bottomRows(n) -= dd.bottomRows(n);
    }
  }

  switch (config.objective) {
    case Objective::ciper: result.report = combined_loss(l_c, l_p, config.alpha, config.tau); break;
    case Objective::contrastive: result.report = combined_loss(l_c, 0.0, 0.0, config.tau); break;
    case Objective::predictive: result.report = combined_loss(0.0, l_p, 1.0, config.tau); break;
  }
  if (!std::isfinite(result.report.total) || !std::isfinite(l_c) || !std::isfinite(l_p))
    throw NonFiniteLossError("non-finite loss (l_c=" + std::to_string(l_c) + ", l_p=" + std::to_string(l_p) + ")",
                             -1, "");

  nn::Activation<float> grad_views;
  grad_views.n = hv.n;
  grad_views.data = std::move(dhv);
  model.encoder.backward(grad_views, view_cache);
  if (dha.size() > 0) model.encoder.backward(nn::dense(std::move(dha)), anchor_cache);

  const auto params = model.parameters();
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.template cast<double>().squaredNorm();
  result.grad_norm = std::sqrt(sq);
  if (config.grad_clip > 0.0 && result.grad_norm > config.grad_clip) {
    const auto scale = static_cast<float>(config.grad_clip / result.grad_norm);
    for (auto* p : params) p->grad *= scale;
  }
  optimizer.step(params, lr);
  return result;
}

std::vector<std::pair<int, int>> epoch_batches(int n, int batch_size) {
  if (batch_size < 2) throw PreconditionError("epoch_batches: batch_size must be >= 2");
  std::vector<std::pair<int, int>> out;
  for (int start = 0; start < n; start += batch_size) out.emplace_back(start, std::min(n, start + batch_size));
  if (out.size() >= 2 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

namespace {

void write_metrics_row(std::ostream& out, std::int64_t step, int epoch, double lr, const LossReport& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%lld,%d,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(step), epoch, lr, r.l_c,
                r.l_p, r.total);
  out << line;
}

std::filesystem::path write_nan_dump(const std::filesystem::path& run_dir, std::int64_t step, const TrainingBatch& b,
                                     const std::string& what) {
  const auto path = run_dir / "nan_dump.txt";
  std::ofstream out(path);
  out << "error: " << what << "\nstep: " << step << "\nsample_ids:";
  for (auto id : b.sample_ids) out << ' ' << id;
  out << "\nrecords_view1:\n" << b.records1 << "\nrecords_view2:\n" << b.records2 << '\n';
  return path;
}

}  // namespace

TrainResult run_training(const TrainConfig& config, const TrainingData& data, const std::filesystem::path& run_dir,
                         const RunOptions& options) {
  config.validate();
  if (data.train.size() < 2) throw ConfigError("run_training: dataset missing or smaller than 2 samples");
  const AugmentationSchema schema = schema_for(config, data);
  HeadSpec heads{config.projector_hidden, config.z_dim, config.predictor_hidden, schema.predictor_width()};
  CiperModel<float> model(config.encoder, heads, config.seed);
  Sgd<float> optimizer({config.momentum, config.weight_decay, false});
  TargetNormalizer normalizer(config.target_normalization);
  const std::string config_text = to_config(config).dump();

  int start_epoch = 0;
  if (options.resume_from) {
    const CheckpointInfo info = load_checkpoint(*options.resume_from, model, &optimizer, &normalizer);
    start_epoch = info.epoch;
  }

  std::filesystem::create_directories(run_dir / "checkpoints");
  {
    std::ofstream cfg_out(run_dir / "config.cfg");
    cfg_out << config_text;
  }
  TrainResult result;
  result.run_dir = run_dir;
  result.metrics_log = run_dir / "metrics.csv";
  std::ofstream metrics(result.metrics_log);
  metrics << "step,epoch,lr,l_c,l_p,total\n";
  std::ofstream targets;
  if (config.log_targets) {
    targets.open(run_dir / "targets.csv");
    targets << target_log_header(schema) << '\n';
  }

  const auto batches = epoch_batches(static_cast<int>(data.train.size()), config.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>(batches.size());
  const std::int64_t total_steps = steps_per_epoch * config.epochs;
  const int end_epoch =
      options.stop_after_epochs > 0 ? std::min(config.epochs, options.stop_after_epochs) : config.epochs;
  const SceneRenderer* renderer = data.renderer ? &*data.renderer : nullptr;

  std::vector<int> order(data.train.size());
  std::vector<const LabeledSample*> members;
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::int64_t bi = 0; bi < steps_per_epoch; ++bi) {
      const std::int64_t step = epoch * steps_per_epoch + bi;
      const auto [begin, end] = batches[static_cast<size_t>(bi)];
      members.clear();
      for (int k = begin; k < end; ++k) members.push_back(&data.train[static_cast<size_t>(order[static_cast<size_t>(k)])]);
      const TrainingBatch batch =
          assemble_batch(members, config.aug_mode, schema, config.policy, renderer,
                         derive_seed(config.seed, 0xba7c, static_cast<std::uint64_t>(step)), normalizer);
      const double lr = cosine_lr(step, total_steps, config.base_lr);
      StepResult sr;
      try {
        sr = train_step(model, optimizer, batch, config, schema, lr);
      } catch (const NonFiniteLossError& e) {
        const auto dump = write_nan_dump(run_dir, step, batch, e.what());
        metrics.flush();
        throw NonFiniteLossError(std::string(e.what()) + " at step " + std::to_string(step), bi, dump.string());
      }
      write_metrics_row(metrics, step, epoch, lr, sr.report);
      result.history.push_back(sr.report);
      if (config.log_targets) {
        for (Eigen::Index i = 0; i < batch.records1.rows(); ++i) {
          write_target_row(targets, step, 1, batch.sample_ids[static_cast<size_t>(i)], batch.records1.row(i).transpose());
          write_target_row(targets, step, 2, batch.sample_ids[static_cast<size_t>(i)], batch.records2.row(i).transpose());
        }
      }
    }
    const bool last = epoch + 1 == end_epoch;
    if ((config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) || last) {
      char name[48];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch + 1);
      const auto path = run_dir / "checkpoints" / name;
      save_checkpoint(path, model, &optimizer, &normalizer,
                      {kCheckpointVersion, epoch + 1, (epoch + 1) * steps_per_epoch, config_text, model.encoder_spec,
                       model.head_spec});
      result.checkpoints.push_back(path);
    }
  }
  result.final_checkpoint = run_dir / "final.ckpt";
  save_checkpoint(result.final_checkpoint, model, &optimizer, &normalizer,
                  {kCheckpointVersion, end_epoch, end_epoch * steps_per_epoch, config_text, model.encoder_spec,
                   model.head_spec});
  return result;
}

}  // namespace ciper
