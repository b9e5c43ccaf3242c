#include "ciper/model.hpp"

namespace ciper {

ImageTensor positional_encode(const ImageTensor& image) {
  if (image.channels == kEncodedChannels)
    throw ShapeError("positional_encode: tensor already has " + std::to_string(kEncodedChannels) + " channels");
  if (image.channels <= 0 || image.height <= 0 || image.width <= 0)
    throw ShapeError("positional_encode: empty image");
  ImageTensor out(image.channels + 2, image.height, image.width);
  const Eigen::Index hw = Eigen::Index{image.height} * image.width;
  out.data.head(image.data.size()) = image.data;
  auto coord = [](int i, int n) { return n == 1 ? -1.0f : -1.0f + 2.0f * static_cast<float>(i) / (n - 1); };
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      out.data[image.channels * hw + Eigen::Index{y} * image.width + x] = coord(x, image.width);
      out.data[(image.channels + 1) * hw + Eigen::Index{y} * image.width + x] = coord(y, image.height);
    }
  }
  return out;
}

std::string to_string(EncoderVariant v) {
  return v == EncoderVariant::small_conv ? "small_conv" : "resnet18_cifar";
}

EncoderVariant encoder_variant_from_string(const std::string& s) {
  if (s == "small_conv") return EncoderVariant::small_conv;
  if (s == "resnet18_cifar") return EncoderVariant::resnet18_cifar;
  throw ConfigError("unknown encoder variant '" + s + "'");
}

void EncoderSpec::validate() const {
  if (input_channels <= 0) throw ConfigError("encoder: input_channels must be positive");
  if (output_dim <= 0) throw ConfigError("encoder: output_dim must be positive");
  if (variant == EncoderVariant::small_conv) {
    if (widths.empty()) throw ConfigError("encoder: small_conv needs at least one block");
    for (int w : widths)
      if (w <= 0) throw ConfigError("encoder: widths must be positive");
  }
}

void HeadSpec::validate() const {
  if (projector_hidden <= 0 || z_dim <= 0 || predictor_hidden <= 0 || predictor_out <= 0)
    throw ConfigError("heads: all widths must be positive");
}

Matrix<float> encode_images(nn::Sequential<float>& encoder, std::span<const ImageTensor> images, int chunk) {
  if (images.empty()) return {};
  Matrix<float> out;
  std::vector<ImageTensor> encoded;
  for (size_t start = 0; start < images.size(); start += static_cast<size_t>(chunk)) {
    const size_t end = std::min(images.size(), start + static_cast<size_t>(chunk));
    encoded.clear();
    for (size_t i = start; i < end; ++i) encoded.push_back(positional_encode(images[i]));
    nn::Cache<float> cache;
    const auto h = encoder.forward(to_activation<float>(encoded), nn::Mode::eval, cache);
    if (out.size() == 0) out.resize(static_cast<Eigen::Index>(images.size()), h.channels());
    out.middleRows(static_cast<Eigen::Index>(start), h.data.rows()) = h.data;
  }
  return out;
}

}  // namespace ciper
