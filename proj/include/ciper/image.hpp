#pragma once

#include "ciper/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ciper {

/// Channel-planar C×H×W image with intensities in [0, 1].
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Eigen::ArrayXf data;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(Eigen::ArrayXf::Constant(Eigen::Index{c} * h * w, fill)) {}

  float& at(int c, int y, int x) { return data[(Eigen::Index{c} * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(Eigen::Index{c} * height + y) * width + x]; }

  /// Contiguous H×W plane of one channel (row-major in memory).
  auto plane(int c) { return data.segment(Eigen::Index{c} * height * width, Eigen::Index{height} * width); }
  auto plane(int c) const { return data.segment(Eigen::Index{c} * height * width, Eigen::Index{height} * width); }

  bool same_shape(const ImageTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const ImageTensor& o) const {
    return same_shape(o) && (data == o.data).all();
  }
};

/// Quantizes to 8 bits and writes binary PPM (3 channels) or PGM (1 channel).
void write_netpbm(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_netpbm(const std::filesystem::path& path);

/// Bilinear resize, half-pixel centers (no corner alignment).
ImageTensor resize_bilinear(const ImageTensor& image, int out_height, int out_width);

}  // namespace ciper
