#include "ciper/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace ciper {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'P', 'E', 'R', 'C', 'K', 'P'};

using json = nlohmann::json;

json spec_to_json(const EncoderSpec& e, const HeadSpec& h) {
  return {{"encoder",
           {{"variant", to_string(e.variant)},
            {"input_channels", e.input_channels},
            {"output_dim", e.output_dim},
            {"widths", e.widths}}},
          {"heads",
           {{"projector_hidden", h.projector_hidden},
            {"z_dim", h.z_dim},
            {"predictor_hidden", h.predictor_hidden},
            {"predictor_out", h.predictor_out}}}};
}

void spec_from_json(const json& j, EncoderSpec& e, HeadSpec& h) {
  const auto& je = j.at("encoder");
  e.variant = encoder_variant_from_string(je.at("variant").get<std::string>());
  e.input_channels = je.at("input_channels").get<int>();
  e.output_dim = je.at("output_dim").get<int>();
  e.widths = je.at("widths").get<std::vector<int>>();
  const auto& jh = j.at("heads");
  h.projector_hidden = jh.at("projector_hidden").get<int>();
  h.z_dim = jh.at("z_dim").get<int>();
  h.predictor_hidden = jh.at("predictor_hidden").get<int>();
  h.predictor_out = jh.at("predictor_out").get<int>();
}

struct RawCheckpoint {
  json header;
  std::vector<char> payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw MalformedFileError("checkpoint: bad magic in " + path.string());
  if (version != kCheckpointVersion)
    throw MalformedFileError("checkpoint: unsupported version " + std::to_string(version));
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw MalformedFileError("checkpoint: truncated header");
  RawCheckpoint raw;
  try {
    raw.header = json::parse(header);
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (with_payload) {
    raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return raw;
}

CheckpointInfo info_from_header(const json& h) {
  CheckpointInfo info;
  info.version = h.at("version").get<std::uint32_t>();
  info.epoch = h.at("epoch").get<int>();
  info.step = h.at("step").get<std::int64_t>();
  info.config_text = h.at("config").get<std::string>();
  spec_from_json(h.at("spec"), info.encoder_spec, info.head_spec);
  return info;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, CiperModel<float>& model, const Sgd<float>* optimizer,
                     const TargetNormalizer* normalizer, const CheckpointInfo& info) {
  std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
  for (auto* p : model.parameters()) tensors.emplace_back(p->name, &p->value);
  for (auto& b : model.buffers()) tensors.emplace_back(b.name, b.value);
  if (optimizer)
    for (const auto& [name, buf] : optimizer->momentum_buffers()) tensors.emplace_back("momentum:" + name, &buf);

  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : tensors) {
    table.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m->size()) * sizeof(float);
  }
  json header = {{"version", kCheckpointVersion},
                 {"epoch", info.epoch},
                 {"step", info.step},
                 {"config", info.config_text},
                 {"spec", spec_to_json(model.encoder_spec, model.head_spec)},
                 {"tensors", table}};
  if (normalizer && normalizer->mode() == TargetNormalization::running && normalizer->count() > 0) {
    const auto& mean = normalizer->running_mean();
    const auto& m2 = normalizer->running_m2();
    header["target_normalizer"] = {{"count", normalizer->count()},
                                   {"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
                                   {"m2", std::vector<double>(m2.data(), m2.data() + m2.size())}};
  }
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t header_len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : tensors)
      out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return info_from_header(read_raw(path, false).header);
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, CiperModel<float>& model, Sgd<float>* optimizer,
                               TargetNormalizer* normalizer) {
  RawCheckpoint raw = read_raw(path, true);
  CheckpointInfo info = info_from_header(raw.header);
  if (spec_to_json(info.encoder_spec, info.head_spec) != spec_to_json(model.encoder_spec, model.head_spec))
    throw ShapeError("checkpoint: model specs do not match " + path.string());

  std::map<std::string, Matrix<float>*> targets;
  for (auto* p : model.parameters()) targets[p->name] = &p->value;
  for (auto& b : model.buffers()) targets[b.name] = b.value;
  size_t loaded = 0;
  for (const auto& entry : raw.header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = static_cast<std::uint64_t>(rows * cols) * sizeof(float);
    if (offset + bytes > raw.payload.size()) throw MalformedFileError("checkpoint: tensor " + name + " truncated");
    Matrix<float> m(rows, cols);
    std::memcpy(m.data(), raw.payload.data() + offset, bytes);
    if (name.rfind("momentum:", 0) == 0) {
      if (optimizer) optimizer->momentum_buffers()[name.substr(9)] = std::move(m);
      continue;
    }
    auto it = targets.find(name);
    if (it == targets.end()) throw ShapeError("checkpoint: unexpected tensor " + name);
    if (it->second->rows() != rows || it->second->cols() != cols)
      throw ShapeError("checkpoint: shape mismatch for " + name);
    *it->second = std::move(m);
    ++loaded;
  }
  if (loaded != targets.size()) throw ShapeError("checkpoint: missing tensors in " + path.string());
  if (normalizer && raw.header.contains("target_normalizer")) {
    const auto& tn = raw.header["target_normalizer"];
    const auto mean = tn.at("mean").get<std::vector<double>>();
    const auto m2 = tn.at("m2").get<std::vector<double>>();
    normalizer->restore(tn.at("count").get<double>(), Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size()),
                        Eigen::Map<const Eigen::VectorXd>(m2.data(), m2.size()));
  }
  return info;
}

std::unique_ptr<CiperModel<float>> load_model(const std::filesystem::path& path) {
  const CheckpointInfo info = read_checkpoint_info(path);
  auto model = std::make_unique<CiperModel<float>>(info.encoder_spec, info.head_spec, 0);
  load_checkpoint(path, *model, nullptr, nullptr);
  return model;
}

}  // namespace ciper
