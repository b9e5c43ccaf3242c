#pragma once

#include "ciper/common.hpp"
#include "ciper/image.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace ciper {

enum class FieldKind { continuous, binary, categorical };

struct ParamField {
  std::string name;
  FieldKind kind = FieldKind::continuous;
  int dims = 1;
  int num_classes = 0;  // categorical only
  std::vector<std::string> slot_names;

  bool operator==(const ParamField&) const = default;
};

/**
 * Ordered description of an augmentation parameter record.
 *
 * Record layout: all continuous and binary slots in field order (M of them),
 * followed by one class-index slot per categorical field. The predictor
 * output uses the same order with each categorical slot widened to a logit
 * block of num_classes entries.
 */
class AugmentationSchema {
 public:
  AugmentationSchema() = default;
  AugmentationSchema(std::string name, std::vector<ParamField> fields);

  /// crop(4) + flip(1) + jitter(4) + grayscale(1); M = 10.
  static AugmentationSchema standard_image();
  /// Viewpoint delta (3 continuous) and/or target session (categorical).
  static AugmentationSchema dataset(bool viewpoint, bool session, int num_sessions);

  const std::string& name() const { return name_; }
  const std::vector<ParamField>& fields() const { return fields_; }

  int total_dims() const { return total_dims_; }
  int num_categorical() const { return static_cast<int>(categorical_classes_.size()); }
  int record_width() const { return total_dims_ + num_categorical(); }
  int predictor_width() const;
  const std::vector<int>& categorical_classes() const { return categorical_classes_; }
  /// Column names of the record, in record order.
  std::vector<std::string> slot_names() const;

  bool operator==(const AugmentationSchema& o) const { return name_ == o.name_ && fields_ == o.fields_; }

 private:
  std::string name_;
  std::vector<ParamField> fields_;
  int total_dims_ = 0;
  std::vector<int> categorical_classes_;
};

/// Probabilities and ranges of the standard image augmentations.
struct AugPolicy {
  double crop_p = 1.0;
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_p = 0.8;
  double jitter_p = 0.8;
  // Factors are drawn from [1 - s, 1 + s]; hue from [-hue, hue] (fraction of a turn).
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_p = 0.2;

  /// Throws ConfigError on probabilities outside [0,1] or empty ranges.
  void validate() const;
};

struct CropParams {
  double x = 0.0;  // left edge, fraction of width
  double y = 0.0;  // top edge, fraction of height
  double h = 1.0;
  double w = 1.0;
  bool operator==(const CropParams&) const = default;
};

struct JitterParams {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
  bool operator==(const JitterParams&) const = default;
};

struct AppliedFlags {
  bool crop = false;
  bool flip = false;
  bool jitter = false;
  bool grayscale = false;
  bool operator==(const AppliedFlags&) const = default;
};

/**
 * One sampled image augmentation. Fields whose gate did not fire hold the
 * identity value. Note the grayscale indicator is inverted: 0 means the view
 * was converted to grayscale.
 */
struct ImageAugParams {
  CropParams crop;
  int flip = 0;
  JitterParams jitter;
  int grayscale = 1;
  AppliedFlags applied;

  static ImageAugParams identity() { return {}; }
  bool operator==(const ImageAugParams&) const = default;
};

inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

ImageAugParams sample_image_augmentation(Rng& rng, const AugPolicy& policy);

/// Pure function: crop -> flip -> jitter -> grayscale, then clamp to [0,1].
ImageTensor apply_image_augmentation(const ImageTensor& image, const ImageAugParams& params, int out_height,
                                     int out_width);

Eigen::VectorXd encode_parameters(const ImageAugParams& params, const AugmentationSchema& schema);
/// Applied flags are recovered as "differs from the identity value".
ImageAugParams decode_image_parameters(const Eigen::VectorXd& record, const AugmentationSchema& schema);

/// Minibatch view of prediction targets.
struct TargetBatch {
  Eigen::MatrixXd raw;         // N×M
  Eigen::MatrixXd normalized;  // N×M
  Eigen::VectorXd mean;        // M
  Eigen::VectorXd std;         // M, population std
  Eigen::MatrixXi labels;      // N×(#categorical fields)

  Eigen::Index rows() const { return raw.rows(); }
};

inline constexpr double kTargetEpsilon = 1e-8;

/// Per-column z-score with population std; columns with std <= 1e-8 map to 0.
TargetBatch normalize_targets(const Eigen::MatrixXd& raw);

enum class TargetNormalization { per_batch, running };

/**
 * Splits encoded records into normalized continuous targets and categorical
 * labels. In running mode the statistics accumulate over every batch seen so
 * far (the current batch included) instead of the current batch alone.
 */
class TargetNormalizer {
 public:
  explicit TargetNormalizer(TargetNormalization mode = TargetNormalization::per_batch) : mode_(mode) {}

  TargetBatch operator()(const Eigen::MatrixXd& records, const AugmentationSchema& schema);

  TargetNormalization mode() const { return mode_; }
  // Running-mode state, exposed for checkpointing.
  double count() const { return count_; }
  const Eigen::VectorXd& running_mean() const { return mean_; }
  const Eigen::VectorXd& running_m2() const { return m2_; }
  void restore(double count, Eigen::VectorXd mean, Eigen::VectorXd m2);

 private:
  TargetNormalization mode_;
  double count_ = 0.0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

/// CSV header of the per-run target log: step,view,sample,<slot names>.
std::string target_log_header(const AugmentationSchema& schema);
void write_target_row(std::ostream& out, std::int64_t step, int view, std::int64_t sample,
                      const Eigen::VectorXd& record);

}  // namespace ciper
