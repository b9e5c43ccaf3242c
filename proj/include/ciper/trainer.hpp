#pragma once

#include "ciper/augment.hpp"
#include "ciper/config.hpp"
#include "ciper/model.hpp"
#include "ciper/objectives.hpp"
#include "ciper/optim.hpp"
#include "ciper/scene.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ciper {

enum class Objective { ciper, contrastive, predictive };
enum class AugMode { image, dataset };
enum class DatasetAug { viewpoint, session, both };

std::string to_string(Objective o);
std::string to_string(AugMode m);
std::string to_string(DatasetAug d);

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | cifar
  SceneConfig scene;
  std::vector<std::string> cifar_train;
  std::string cifar_test;
  int cifar_limit = 0;  // 0 = all records
};

struct TrainConfig {
  Objective objective = Objective::ciper;
  double alpha = 1.0;
  double tau = 0.5;
  double base_lr = 0.03;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  double grad_clip = 5.0;  // global gradient norm cap, 0 = off
  int epochs = 30;
  int batch_size = 64;
  std::uint64_t seed = 0;
  EncoderSpec encoder;
  int projector_hidden = 2048;
  int z_dim = 128;
  int predictor_hidden = 512;
  AugMode aug_mode = AugMode::dataset;
  DatasetAug dataset_aug = DatasetAug::both;
  AugPolicy policy;
  TargetNormalization target_normalization = TargetNormalization::per_batch;
  int checkpoint_every = 10;  // epochs; 0 = final checkpoint only
  bool log_targets = true;
  DataConfig data;

  void validate() const;
  /// Loss weight on L_p actually used in the update.
  double prediction_weight() const;
};

/// Reads the [train], [model], [augment] and [data] sections; unknown keys are rejected.
TrainConfig train_config_from(const Config& cfg);
/// Every TrainConfig field, defaults resolved.
Config to_config(const TrainConfig& tc);
std::vector<std::string> train_config_keys();

struct TrainingData {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
  std::optional<SceneRenderer> renderer;  // synthetic data only
  int num_objects = 0;
  int num_sessions = 0;
};

TrainingData load_training_data(const DataConfig& cfg);

AugmentationSchema schema_for(const TrainConfig& tc, const TrainingData& data);

struct TrainingBatch {
  std::vector<ImageTensor> anchors;
  std::vector<ImageTensor> view1;
  std::vector<ImageTensor> view2;
  Eigen::MatrixXd records1;  // raw encoded parameters, one row per sample
  Eigen::MatrixXd records2;
  TargetBatch targets1;
  TargetBatch targets2;
  std::vector<std::int64_t> sample_ids;

  int size() const { return static_cast<int>(anchors.size()); }
};

/**
 * Builds an anchor plus two independently augmented views per sample.
 * Sample i draws from its own stream derived from (batch_seed, i).
 */
TrainingBatch assemble_batch(std::span<const LabeledSample* const> samples, AugMode mode,
                             const AugmentationSchema& schema, const AugPolicy& policy,
                             const SceneRenderer* renderer, std::uint64_t batch_seed, TargetNormalizer& normalizer);

struct StepResult {
  LossReport report;
  int encoder_images = 0;  // images pushed through the encoder this step
  double grad_norm = 0.0;  // global gradient norm before clipping
};

/// One forward/backward pass, gradient clipping and SGD update. Throws NonFiniteLossError(-1, "") on a non-finite loss.
StepResult train_step(CiperModel<float>& model, Sgd<float>& optimizer, const TrainingBatch& batch,
                      const TrainConfig& config, const AugmentationSchema& schema, double lr);

struct RunOptions {
  std::optional<std::filesystem::path> resume_from;
  int stop_after_epochs = 0;  // 0 = run to config.epochs; used to simulate interruption
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_log;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<LossReport> history;
};

/// Batches per epoch: ceil(n / batch) unless the tail would hold a single sample, which joins the previous batch.
std::vector<std::pair<int, int>> epoch_batches(int n, int batch_size);

/**
 * Runs config.epochs epochs of train_step with per-iteration cosine decay,
 * writing config.cfg, metrics.csv, targets.csv and checkpoints/ under
 * run_dir. Reproducible from (config, seed); resuming from a checkpoint
 * continues the same trajectory.
 */
TrainResult run_training(const TrainConfig& config, const TrainingData& data, const std::filesystem::path& run_dir,
                         const RunOptions& options = {});

}  // namespace ciper
