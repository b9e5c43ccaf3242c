#pragma once

#include "ciper/augment.hpp"
#include "ciper/common.hpp"
#include "ciper/image.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ciper {

inline constexpr double kPi = 3.14159265358979323846;

struct View {
  double azimuth = 0.0;    // [0, 2π)
  double elevation = 0.0;  // [-π/4, π/4]
  double distance = 1.0;   // [d_min, d_max]
  bool operator==(const View&) const = default;
};

/// Synthetic active-observer dataset: objects × sessions × viewpoints.
struct SceneConfig {
  int num_objects = 8;
  int num_sessions = 4;
  std::vector<int> train_sessions{0, 1};
  int samples_per_cell = 125;       // per (object, train session)
  int test_samples_per_cell = 63;   // per (object, held-out session)
  int image_size = 32;
  std::uint64_t seed = 0;
  double d_min = 1.0;
  double d_max = 2.0;
  // Viewpoint augmentation ranges; deltas are reported divided by these.
  double delta_azimuth = kPi / 4.0;
  double delta_elevation = kPi / 12.0;
  double delta_distance = 0.2;  // relative change of distance
  bool report_post_clamp = true;

  void validate() const;
  std::vector<int> test_sessions() const;
};

struct LabeledSample {
  std::int64_t id = 0;
  ImageTensor image;
  int object_id = 0;
  int session_id = 0;
  View view;
};

struct Dataset {
  SceneConfig config;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

struct ViewpointAugParams {
  Eigen::Vector3d delta = Eigen::Vector3d::Zero();  // normalized to [-1, 1]
};

struct SessionAugParams {
  int target_session = 0;
};

/**
 * 2-D procedural renderer. Each object is a fixed silhouette; the view moves,
 * rotates, scales and shades it; the session picks the background texture.
 * Object pixels never depend on the session.
 */
class SceneRenderer {
 public:
  explicit SceneRenderer(SceneConfig config);

  const SceneConfig& config() const { return config_; }

  ImageTensor render(int object_id, const View& view, int session_id) const;
  /// Single-channel fraction of each pixel covered by the object.
  ImageTensor coverage(int object_id, const View& view) const;
  ImageTensor background(int session_id) const;

  void check_factors(int object_id, const View& view, int session_id) const;

 private:
  struct Palette {
    Eigen::Array3f a, b;
    double angle, frequency, phase;
  };
  SceneConfig config_;
  std::vector<Palette> palettes_;
};

/// Renders one image; convenience wrapper over SceneRenderer.
ImageTensor render_scene(const SceneConfig& config, int object_id, const View& view, int session_id);

/// Train split: train sessions only. Test split: the remaining sessions.
Dataset build_dataset(const SceneConfig& config);

struct ViewpointResult {
  ImageTensor image;
  ViewpointAugParams params;
  View view;
};
/// Draws a view delta uniformly from the configured ranges and re-renders.
ViewpointResult viewpoint_augment(const SceneRenderer& renderer, const LabeledSample& sample, Rng& rng);
/// Re-renders at view + delta. delta is in normalized units ([-1,1] per axis).
ViewpointResult apply_view_delta(const SceneRenderer& renderer, const LabeledSample& sample,
                                 const Eigen::Vector3d& normalized_delta);

struct SessionResult {
  ImageTensor image;
  SessionAugParams params;
};
SessionResult session_augment(const SceneRenderer& renderer, const LabeledSample& sample, Rng& rng);

/// Record for the dataset schema: [normalized view delta][target session].
struct DatasetAugResult {
  ImageTensor image;
  Eigen::VectorXd record;
};
DatasetAugResult dataset_augment(const SceneRenderer& renderer, const LabeledSample& sample, Rng& rng,
                                 const AugmentationSchema& schema);

/// Writes manifest.csv plus one PPM per sample under dir/images.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
std::string manifest_header();

/// CIFAR-10 binary batch: records of 1 label byte + 3072 channel-planar pixels.
std::vector<LabeledSample> parse_cifar_binary(const std::filesystem::path& path);
void write_cifar_binary(const std::filesystem::path& path, const std::vector<LabeledSample>& samples);

}  // namespace ciper
