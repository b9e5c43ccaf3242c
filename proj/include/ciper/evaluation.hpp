#pragma once

#include "ciper/config.hpp"
#include "ciper/model.hpp"
#include "ciper/scene.hpp"
#include "ciper/trainer.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ciper {

enum class ProbeTask { object_acc, session_acc, view_r2 };

std::string to_string(ProbeTask t);
ProbeTask probe_task_from_string(const std::string& s);

struct ProbeConfig {
  int epochs = 30;
  int batch_size = 256;
  double base_lr = 1.0;
  double decay_factor = 3.33;
  int decay_every = 10;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  bool nesterov = true;

  void validate() const;
};

/// Reads the [probe] section; unknown keys in it are rejected.
ProbeConfig probe_config_from(const Config& cfg);
std::vector<std::string> probe_config_keys();

/**
 * One linear layer on frozen features. Inputs are standardized with the
 * probe-train statistics and scaled by 1/sqrt(F) before the layer.
 */
struct LinearProbe {
  ProbeTask task = ProbeTask::object_acc;
  Eigen::RowVectorXd feature_mean;
  Eigen::RowVectorXd feature_scale;
  Eigen::MatrixXd weight;  // F×k
  Eigen::RowVectorXd bias;

  Eigen::MatrixXd transform(const Eigen::MatrixXd& features) const;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const;
  std::vector<int> classify(const Eigen::MatrixXd& features) const;
};

/// Cross-entropy probe. Labels must lie in [0, num_classes).
LinearProbe fit_classifier(const Eigen::MatrixXd& features, std::span<const int> labels, int num_classes,
                           const ProbeConfig& cfg, std::uint64_t seed, ProbeTask task = ProbeTask::object_acc);

/// MSE probe onto N×k targets.
LinearProbe fit_regressor(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets, const ProbeConfig& cfg,
                          std::uint64_t seed);

/// Percentage of matching labels.
double accuracy(std::span<const int> predicted, std::span<const int> labels);

/// 1 − SS_res/SS_tot with residuals pooled over every column.
double r_squared(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets);

/// [cos az, sin az, elevation, distance] per sample.
Eigen::MatrixXd view_targets(std::span<const LabeledSample> samples);

struct ProbeReport {
  ProbeTask task = ProbeTask::object_acc;
  double value = 0.0;
  double std = 0.0;
  int num_seeds = 1;
  std::string checkpoint;
};

/// Mean and population std across seeds.
ProbeReport aggregate(std::span<const ProbeReport> runs);

/**
 * Linear evaluation of a frozen encoder. On synthetic data every probe fits
 * one seeded half of the test split (unseen sessions) and scores the other.
 * Otherwise only the object probe runs, fit on train and scored on test.
 */
std::vector<ProbeReport> probe_encoder(nn::Sequential<float>& encoder, const TrainingData& data,
                                       std::span<const ProbeTask> tasks, const ProbeConfig& cfg, std::uint64_t seed);

std::vector<ProbeReport> probe_checkpoint(const std::filesystem::path& checkpoint, const TrainingData& data,
                                          std::span<const ProbeTask> tasks, const ProbeConfig& cfg,
                                          std::uint64_t seed);

inline constexpr const char* kResultsHeader = "checkpoint,task,value,std,seeds";

/// Appends rows, writing the header when the file is new.
void append_results(const std::filesystem::path& path, std::span<const ProbeReport> reports);
std::vector<ProbeReport> read_results(const std::filesystem::path& path);

/**
 * CSV with id, object_id, session_id, azimuth, elevation, distance, h_1..h_n
 * and, when requested, the projection onto the top two principal directions.
 */
void export_embeddings(nn::Sequential<float>& encoder, int output_dim, std::span<const LabeledSample> samples,
                       const std::filesystem::path& path, bool with_projection = true);

/// Rows projected onto the top-2 principal directions of the centered data. Column signs are fixed so the
/// largest-magnitude loading of each direction is positive.
Eigen::MatrixXd principal_projection(const Eigen::MatrixXd& data, int components = 2);

struct AblationRun {
  std::string label;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  std::vector<ProbeReport> reports;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{0};
  std::vector<ProbeTask> tasks{ProbeTask::object_acc, ProbeTask::session_acc, ProbeTask::view_r2};
  ProbeConfig probe;
  int jobs = 1;
};

/// Trains and probes one run per (alpha, seed) under root/alpha_<a>_seed_<s>.
std::vector<AblationRun> ablate_alpha(const TrainConfig& base, std::span<const double> alphas,
                                      const TrainingData& data, const std::filesystem::path& root,
                                      const AblationOptions& options);

/// Full policy plus one run per image augmentation (crop, flip, jitter, grayscale) with it disabled.
std::vector<AblationRun> ablate_augmentations(const TrainConfig& base, const TrainingData& data,
                                              const std::filesystem::path& root, const AblationOptions& options);

/// Aggregates runs sharing a label into one report per task; checkpoint field holds the label.
std::vector<ProbeReport> summarize(std::span<const AblationRun> runs);

/// Renders results.csv as an aligned text table.
std::string format_results_table(std::span<const ProbeReport> reports);

/// Line plot of the loss columns of a metrics.csv.
void plot_losses(const std::filesystem::path& metrics_csv, const std::filesystem::path& image_path,
                 int width = 640, int height = 360);

/// One bar per report of the given task.
void plot_results(std::span<const ProbeReport> reports, ProbeTask task, const std::filesystem::path& image_path,
                  int width = 640, int height = 360);

}  // namespace ciper
