#pragma once

#include "ciper/augment.hpp"
#include "ciper/model.hpp"
#include "ciper/optim.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace ciper {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = kCheckpointVersion;
  int epoch = 0;
  std::int64_t step = 0;
  std::string config_text;
  EncoderSpec encoder_spec;
  HeadSpec head_spec;
};

/**
 * Binary container: magic "CIPERCKP", u32 version, u64 header length, JSON
 * header (specs, counters, tensor table), then little-endian float32 tensor
 * payloads in table order. Holds weights, batch-norm statistics, momentum
 * buffers and running target statistics.
 */
void save_checkpoint(const std::filesystem::path& path, CiperModel<float>& model, const Sgd<float>* optimizer,
                     const TargetNormalizer* normalizer, const CheckpointInfo& info);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Loads into an existing model whose specs must match the file.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, CiperModel<float>& model, Sgd<float>* optimizer,
                               TargetNormalizer* normalizer);

/// Builds a model from the specs stored in the file and loads its weights.
std::unique_ptr<CiperModel<float>> load_model(const std::filesystem::path& path);

}  // namespace ciper
