#pragma once

#include "ciper/image.hpp"
#include "ciper/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace ciper {

inline constexpr int kEncodedChannels = 5;  // RGB + x + y

/**
 * Appends x and y coordinate channels, each linearly spaced over [-1, 1]
 * along its own axis. A length-1 axis gets the single coordinate -1.
 * Rejects tensors that already carry the encoded channel count.
 */
ImageTensor positional_encode(const ImageTensor& image);

enum class EncoderVariant { small_conv, resnet18_cifar };

std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(const std::string& s);

struct EncoderSpec {
  EncoderVariant variant = EncoderVariant::small_conv;
  int input_channels = kEncodedChannels;
  int output_dim = 128;
  std::vector<int> widths{32, 64, 128, 256};  // small_conv only

  void validate() const;
};

struct HeadSpec {
  int projector_hidden = 2048;
  int z_dim = 128;
  int predictor_hidden = 512;
  int predictor_out = 10;  // M + Σ num_classes

  void validate() const;
};

/// Packs images (all the same shape) into the encoder's input layout.
template <typename Scalar>
nn::Activation<Scalar> to_activation(std::span<const ImageTensor> images) {
  if (images.empty()) throw ShapeError("to_activation: empty batch");
  const ImageTensor& first = images.front();
  nn::Activation<Scalar> a;
  a.n = static_cast<int>(images.size());
  a.h = first.height;
  a.w = first.width;
  const Eigen::Index hw = Eigen::Index{first.height} * first.width;
  a.data.resize(a.n * hw, first.channels);
  for (int i = 0; i < a.n; ++i) {
    const ImageTensor& img = images[static_cast<size_t>(i)];
    if (!img.same_shape(first)) throw ShapeError("to_activation: images differ in shape");
    for (int c = 0; c < img.channels; ++c) a.data.col(c).segment(i * hw, hw) = img.plane(c).template cast<Scalar>();
  }
  return a;
}

/// F_enc: conv trunk, global average pool, final linear layer to n dims.
template <typename Scalar>
nn::Sequential<Scalar> make_encoder(const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  nn::Sequential<Scalar> net;
  int channels = spec.input_channels;
  if (spec.variant == EncoderVariant::small_conv) {
    for (size_t i = 0; i < spec.widths.size(); ++i) {
      const std::string name = "encoder.block" + std::to_string(i);
      net.template emplace<nn::Conv2d<Scalar>>(name + ".conv", channels, spec.widths[i], 3, 1, 1, rng);
      net.template emplace<nn::BatchNorm<Scalar>>(name + ".bn", spec.widths[i]);
      net.template emplace<nn::ReLU<Scalar>>();
      if (i + 1 < spec.widths.size()) net.template emplace<nn::AvgPool2<Scalar>>();
      channels = spec.widths[i];
    }
  } else {
    // CIFAR stem: 3×3 convolution, no max pooling.
    net.template emplace<nn::Conv2d<Scalar>>("encoder.stem.conv", channels, 64, 3, 1, 1, rng);
    net.template emplace<nn::BatchNorm<Scalar>>("encoder.stem.bn", 64);
    net.template emplace<nn::ReLU<Scalar>>();
    channels = 64;
    const int stage_widths[] = {64, 128, 256, 512};
    for (int s = 0; s < 4; ++s) {
      for (int b = 0; b < 2; ++b) {
        const int stride = (s > 0 && b == 0) ? 2 : 1;
        const std::string name = "encoder.layer" + std::to_string(s + 1) + "." + std::to_string(b);
        net.template emplace<nn::BasicBlock<Scalar>>(name, channels, stage_widths[s], stride, rng);
        channels = stage_widths[s];
      }
    }
  }
  net.template emplace<nn::GlobalAvgPool<Scalar>>();
  net.template emplace<nn::Linear<Scalar>>("encoder.fc", channels, spec.output_dim, rng);
  return net;
}

/// F_proj: two hidden layers, each linear -> batch norm -> relu, then a linear output.
template <typename Scalar>
nn::Sequential<Scalar> make_projector(int in_dim, const HeadSpec& spec, Rng& rng) {
  spec.validate();
  nn::Sequential<Scalar> net;
  net.template emplace<nn::Linear<Scalar>>("projector.fc1", in_dim, spec.projector_hidden, rng);
  net.template emplace<nn::BatchNorm<Scalar>>("projector.bn1", spec.projector_hidden);
  net.template emplace<nn::ReLU<Scalar>>();
  net.template emplace<nn::Linear<Scalar>>("projector.fc2", spec.projector_hidden, spec.projector_hidden, rng);
  net.template emplace<nn::BatchNorm<Scalar>>("projector.bn2", spec.projector_hidden);
  net.template emplace<nn::ReLU<Scalar>>();
  net.template emplace<nn::Linear<Scalar>>("projector.out", spec.projector_hidden, spec.z_dim, rng);
  return net;
}

/// F_pred: linear -> layer norm -> relu -> linear.
template <typename Scalar>
nn::Sequential<Scalar> make_predictor(int in_dim, const HeadSpec& spec, Rng& rng) {
  spec.validate();
  nn::Sequential<Scalar> net;
  net.template emplace<nn::Linear<Scalar>>("predictor.fc1", in_dim, spec.predictor_hidden, rng);
  net.template emplace<nn::LayerNorm<Scalar>>("predictor.ln1", spec.predictor_hidden);
  net.template emplace<nn::ReLU<Scalar>>();
  net.template emplace<nn::Linear<Scalar>>("predictor.out", spec.predictor_hidden, spec.predictor_out, rng);
  return net;
}

/// Shared encoder with its two training heads.
template <typename Scalar>
struct CiperModel {
  EncoderSpec encoder_spec;
  HeadSpec head_spec;
  nn::Sequential<Scalar> encoder;
  nn::Sequential<Scalar> projector;
  nn::Sequential<Scalar> predictor;

  CiperModel(const EncoderSpec& es, const HeadSpec& hs, std::uint64_t seed)
      : encoder_spec(es), head_spec(hs) {
    Rng rng(derive_seed(seed, 0x1417));
    encoder = make_encoder<Scalar>(es, rng);
    projector = make_projector<Scalar>(es.output_dim, hs, rng);
    predictor = make_predictor<Scalar>(es.output_dim, hs, rng);
  }

  std::vector<nn::Param<Scalar>*> parameters() {
    std::vector<nn::Param<Scalar>*> out;
    encoder.parameters(out);
    projector.parameters(out);
    predictor.parameters(out);
    return out;
  }
  std::vector<nn::Buffer<Scalar>> buffers() {
    std::vector<nn::Buffer<Scalar>> out;
    encoder.buffers(out);
    projector.buffers(out);
    predictor.buffers(out);
    return out;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->grad.setZero();
  }
};

/// Runs the encoder in eval mode over images (positional encoding applied here) in chunks.
Matrix<float> encode_images(nn::Sequential<float>& encoder, std::span<const ImageTensor> images,
                            int chunk = 256);

}  // namespace ciper
