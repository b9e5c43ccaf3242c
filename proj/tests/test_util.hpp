#pragma once

#include "ciper/trainer.hpp"

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

namespace ciper::test {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ciper_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& gen) {
  std::normal_distribution<double> dist;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(gen);
  return m;
}

inline ImageTensor random_image(int c, int h, int w, std::mt19937_64& gen) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  ImageTensor img(c, h, w);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data[i] = dist(gen);
  return img;
}

/// A few seconds per epoch: 2 objects, 16×16 renders, narrow encoder and heads.
inline TrainConfig tiny_config() {
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.encoder.widths = {8, 16};
  tc.encoder.output_dim = 16;
  tc.projector_hidden = 32;
  tc.z_dim = 16;
  tc.predictor_hidden = 16;
  tc.checkpoint_every = 1;
  auto& s = tc.data.scene;
  s.num_objects = 2;
  s.num_sessions = 3;
  s.train_sessions = {0, 1};
  s.samples_per_cell = 6;
  s.test_samples_per_cell = 6;
  s.image_size = 16;
  return tc;
}

}  // namespace ciper::test
