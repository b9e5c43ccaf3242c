#include "ciper/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace ciper {

namespace {

constexpr double kElevationLimit = kPi / 4.0;
constexpr int kSupersample = 4;
// Four hues, each shared by two objects.
const Eigen::Array3f kObjectColours[4] = {
    {0.95f, 0.55f, 0.35f}, {0.40f, 0.80f, 0.95f}, {0.90f, 0.85f, 0.35f}, {0.85f, 0.50f, 0.90f}};

// Silhouettes in object-local coordinates; the unit disk bounds every shape.
bool inside_silhouette(int object_id, double u, double v) {
  const double r = std::hypot(u, v);
  const double phi = std::atan2(v, u);
  switch (object_id) {
    case 0: return r <= 0.85;
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.72;
    case 2: return v >= -0.5 && v <= 1.0 - std::sqrt(3.0) * std::abs(u);
    case 3: return (std::abs(u) <= 0.28 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.28 && std::abs(u) <= 0.9);
    case 4: return r >= 0.45 && r <= 0.9;
    case 5: return r <= 0.5 + 0.42 * std::cos(5.0 * phi);
    case 6: return std::abs(u) / 0.5 + std::abs(v) / 0.95 <= 1.0;
    case 7: return r <= 0.9 && std::hypot(u - 0.45, v) >= 0.62;
    default: {
      const int lobes = object_id - 5;
      return r <= 0.55 + 0.35 * std::cos(lobes * phi);
    }
  }
}

struct Placement {
  double cx, cy, radius, cos_a, sin_a, gain;
};

Placement place(const SceneConfig& cfg, const View& view, int height, int width) {
  Placement p;
  p.cx = width * (0.5 + 0.16 * std::sin(view.azimuth));
  p.cy = height * (0.5 - 0.16 * view.elevation / kElevationLimit);
  p.radius = 0.34 * std::min(width, height) * cfg.d_min / view.distance;
  p.cos_a = std::cos(view.azimuth);
  p.sin_a = std::sin(view.azimuth);
  p.gain = (0.85 + 0.15 * view.elevation / kElevationLimit) * (0.8 + 0.2 * std::cos(view.azimuth));
  return p;
}

// Coverage and mean shading of the object over one pixel, by supersampling.
std::pair<float, float> shade_pixel(int object_id, const Placement& p, int y, int x) {
  int hits = 0;
  double shade = 0.0;
  for (int sy = 0; sy < kSupersample; ++sy) {
    for (int sx = 0; sx < kSupersample; ++sx) {
      const double dx = x + (sx + 0.5) / kSupersample - p.cx;
      const double dy = y + (sy + 0.5) / kSupersample - p.cy;
      const double u = (dx * p.cos_a + dy * p.sin_a) / p.radius;
      const double v = (dx * p.sin_a - dy * p.cos_a) / p.radius;
      if (inside_silhouette(object_id, u, v)) {
        ++hits;
        // Directional light whose bearing follows the azimuth.
        shade += 0.65 + 0.35 * std::clamp(u, -1.0, 1.0);
      }
    }
  }
  if (hits == 0) return {0.0f, 0.0f};
  return {static_cast<float>(hits) / (kSupersample * kSupersample),
          static_cast<float>(shade / hits * p.gain)};
}

}  // namespace

void SceneConfig::validate() const {
  if (num_objects < 1) throw ConfigError("scene: num_objects must be positive");
  if (num_sessions < 2) throw ConfigError("scene: need at least 2 sessions");
  if (train_sessions.empty()) throw ConfigError("scene: train session set is empty");
  std::vector<int> sorted = train_sessions;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("scene: duplicate train session");
  for (int s : sorted)
    if (s < 0 || s >= num_sessions) throw ConfigError("scene: train session id out of range");
  if (static_cast<int>(sorted.size()) >= num_sessions)
    throw ConfigError("scene: train sessions must be a strict subset of all sessions");
  if (samples_per_cell < 0 || test_samples_per_cell < 0) throw ConfigError("scene: negative samples per cell");
  if (image_size < 4) throw ConfigError("scene: image_size must be >= 4");
  if (!(d_min > 0.0 && d_min < d_max)) throw ConfigError("scene: need 0 < d_min < d_max");
  if (!(delta_azimuth > 0.0 && delta_elevation > 0.0 && delta_distance > 0.0 && delta_distance < 1.0))
    throw ConfigError("scene: view delta ranges must be positive (distance < 1)");
}

std::vector<int> SceneConfig::test_sessions() const {
  std::vector<int> out;
  for (int s = 0; s < num_sessions; ++s)
    if (std::find(train_sessions.begin(), train_sessions.end(), s) == train_sessions.end()) out.push_back(s);
  return out;
}

SceneRenderer::SceneRenderer(SceneConfig config) : config_(std::move(config)) {
  config_.validate();
  for (int s = 0; s < config_.num_sessions; ++s) {
    Rng rng(derive_seed(config_.seed, 0x5e55, static_cast<std::uint64_t>(s)));
    Palette p;
    for (int c = 0; c < 3; ++c) p.a[c] = static_cast<float>(rng.uniform(0.1, 0.5));
    for (int c = 0; c < 3; ++c) p.b[c] = p.a[c] + static_cast<float>(rng.uniform(-0.12, 0.12));
    p.angle = rng.uniform(0.0, kPi);
    p.frequency = 2.0 * kPi / rng.uniform(6.0, 14.0);
    p.phase = rng.uniform(0.0, 2.0 * kPi);
    palettes_.push_back(p);
  }
}

void SceneRenderer::check_factors(int object_id, const View& view, int session_id) const {
  if (object_id < 0 || object_id >= config_.num_objects) throw PreconditionError("render: object_id out of range");
  if (session_id < 0 || session_id >= config_.num_sessions)
    throw PreconditionError("render: session_id out of range");
  if (!(view.azimuth >= 0.0 && view.azimuth < 2.0 * kPi)) throw PreconditionError("render: azimuth outside [0,2π)");
  if (!(std::abs(view.elevation) <= kElevationLimit)) throw PreconditionError("render: elevation outside [-π/4,π/4]");
  if (!(view.distance >= config_.d_min && view.distance <= config_.d_max))
    throw PreconditionError("render: distance outside [d_min,d_max]");
}

ImageTensor SceneRenderer::background(int session_id) const {
  if (session_id < 0 || session_id >= config_.num_sessions)
    throw PreconditionError("render: session_id out of range");
  const int size = config_.image_size;
  const Palette& p = palettes_[static_cast<size_t>(session_id)];
  ImageTensor img(3, size, size);
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const auto t = static_cast<float>(0.5 + 0.5 * std::sin(p.frequency * (x * ca + y * sa) + p.phase));
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = p.a[c] * (1.0f - t) + p.b[c] * t;
    }
  }
  return img;
}

ImageTensor SceneRenderer::coverage(int object_id, const View& view) const {
  check_factors(object_id, view, 0);
  const int size = config_.image_size;
  const Placement pl = place(config_, view, size, size);
  ImageTensor mask(1, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) mask.at(0, y, x) = shade_pixel(object_id, pl, y, x).first;
  return mask;
}

ImageTensor SceneRenderer::render(int object_id, const View& view, int session_id) const {
  check_factors(object_id, view, session_id);
  const int size = config_.image_size;
  ImageTensor img = background(session_id);
  const Placement pl = place(config_, view, size, size);
  const Eigen::Array3f& colour = kObjectColours[object_id % 4];
  // Only pixels near the object's bounding disk can be covered.
  const int y_lo = std::max(0, static_cast<int>(std::floor(pl.cy - pl.radius)) - 1);
  const int y_hi = std::min(size - 1, static_cast<int>(std::ceil(pl.cy + pl.radius)) + 1);
  const int x_lo = std::max(0, static_cast<int>(std::floor(pl.cx - pl.radius)) - 1);
  const int x_hi = std::min(size - 1, static_cast<int>(std::ceil(pl.cx + pl.radius)) + 1);
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const auto [alpha, shade] = shade_pixel(object_id, pl, y, x);
      if (alpha == 0.0f) continue;
      for (int c = 0; c < 3; ++c) {
        const float obj = std::min(1.0f, colour[c] * shade);
        img.at(c, y, x) = alpha * obj + (1.0f - alpha) * img.at(c, y, x);
      }
    }
  }
  return img;
}

ImageTensor render_scene(const SceneConfig& config, int object_id, const View& view, int session_id) {
  return SceneRenderer(config).render(object_id, view, session_id);
}

Dataset build_dataset(const SceneConfig& config) {
  config.validate();
  SceneRenderer renderer(config);
  Dataset ds;
  ds.config = config;
  std::int64_t next_id = 0;
  auto fill = [&](std::vector<LabeledSample>& split, const std::vector<int>& sessions, int per_cell) {
    for (int obj = 0; obj < config.num_objects; ++obj) {
      for (int s : sessions) {
        for (int k = 0; k < per_cell; ++k) {
          LabeledSample sample;
          sample.id = next_id++;
          Rng rng(derive_seed(config.seed, 0xda7a, static_cast<std::uint64_t>(sample.id)));
          sample.object_id = obj;
          sample.session_id = s;
          sample.view.azimuth = rng.uniform(0.0, 2.0 * kPi);
          sample.view.elevation = rng.uniform(-kElevationLimit, kElevationLimit);
          sample.view.distance = rng.uniform(config.d_min, config.d_max);
          sample.image = renderer.render(obj, sample.view, s);
          split.push_back(std::move(sample));
        }
      }
    }
  };
  fill(ds.train, config.train_sessions, config.samples_per_cell);
  fill(ds.test, config.test_sessions(), config.test_samples_per_cell);
  return ds;
}

ViewpointResult apply_view_delta(const SceneRenderer& renderer, const LabeledSample& sample,
                                 const Eigen::Vector3d& normalized_delta) {
  const SceneConfig& cfg = renderer.config();
  const View& v0 = sample.view;
  View v;
  v.azimuth = std::fmod(v0.azimuth + normalized_delta[0] * cfg.delta_azimuth, 2.0 * kPi);
  if (v.azimuth < 0.0) v.azimuth += 2.0 * kPi;
  if (v.azimuth >= 2.0 * kPi) v.azimuth = 0.0;
  v.elevation = std::clamp(v0.elevation + normalized_delta[1] * cfg.delta_elevation, -kElevationLimit,
                           kElevationLimit);
  v.distance = std::clamp(v0.distance * (1.0 + normalized_delta[2] * cfg.delta_distance), cfg.d_min, cfg.d_max);

  ViewpointResult out;
  out.view = v;
  out.params.delta = normalized_delta;
  if (cfg.report_post_clamp) {
    out.params.delta[1] = (v.elevation - v0.elevation) / cfg.delta_elevation;
    out.params.delta[2] = (v.distance / v0.distance - 1.0) / cfg.delta_distance;
  }
  out.params.delta = out.params.delta.cwiseMax(-1.0).cwiseMin(1.0);
  out.image = renderer.render(sample.object_id, v, sample.session_id);
  return out;
}

ViewpointResult viewpoint_augment(const SceneRenderer& renderer, const LabeledSample& sample, Rng& rng) {
  Eigen::Vector3d delta;
  for (int i = 0; i < 3; ++i) delta[i] = rng.uniform(-1.0, 1.0);
  return apply_view_delta(renderer, sample, delta);
}

SessionResult session_augment(const SceneRenderer& renderer, const LabeledSample& sample, Rng& rng) {
  const auto& pool = renderer.config().train_sessions;
  if (pool.size() < 2) throw PreconditionError("session_augment: need at least 2 training sessions");
  SessionResult out;
  out.params.target_session = pool[rng.index(pool.size())];
  out.image = renderer.render(sample.object_id, sample.view, out.params.target_session);
  return out;
}

DatasetAugResult dataset_augment(const SceneRenderer& renderer, const LabeledSample& sample, Rng& rng,
                                 const AugmentationSchema& schema) {
  const bool viewpoint = !schema.fields().empty() && schema.fields().front().name == "viewpoint";
  const bool session = schema.num_categorical() == 1;
  if (schema.record_width() != (viewpoint ? 3 : 0) + (session ? 1 : 0))
    throw ShapeError("dataset_augment: schema is not a dataset schema");
  if (session && schema.categorical_classes()[0] != renderer.config().num_sessions)
    throw ShapeError("dataset_augment: session class count does not match the scene");

  DatasetAugResult out;
  out.record.resize(schema.record_width());
  LabeledSample moved = sample;
  if (viewpoint) {
    ViewpointResult vr = viewpoint_augment(renderer, sample, rng);
    out.record.head<3>() = vr.params.delta;
    moved.view = vr.view;
    moved.image = std::move(vr.image);
  }
  if (session) {
    SessionResult sr = session_augment(renderer, moved, rng);
    out.record[out.record.size() - 1] = sr.params.target_session;
    moved.image = std::move(sr.image);
  }
  out.image = std::move(moved.image);
  return out;
}

std::string manifest_header() { return "id,split,object_id,session_id,azimuth,elevation,distance,path"; }

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("write_dataset: cannot create manifest in " + dir.string());
  manifest << manifest_header() << '\n';
  char line[256];
  auto emit = [&](const std::vector<LabeledSample>& split, const char* name) {
    for (const auto& s : split) {
      char rel[64];
      std::snprintf(rel, sizeof rel, "images/%06lld.ppm", static_cast<long long>(s.id));
      std::snprintf(line, sizeof line, "%lld,%s,%d,%d,%.17g,%.17g,%.17g,%s\n", static_cast<long long>(s.id), name,
                    s.object_id, s.session_id, s.view.azimuth, s.view.elevation, s.view.distance, rel);
      manifest << line;
      write_netpbm(dir / rel, s.image);
    }
  };
  emit(dataset.train, "train");
  emit(dataset.test, "test");
}

std::vector<LabeledSample> parse_cifar_binary(const std::filesystem::path& path) {
  constexpr std::uintmax_t kRecord = 3073;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("parse_cifar_binary: cannot open " + path.string());
  const std::uintmax_t size = std::filesystem::file_size(path);
  if (size % kRecord != 0)
    throw MalformedFileError("parse_cifar_binary: size " + std::to_string(size) + " is not a multiple of 3073");
  const std::uintmax_t count = size / kRecord;
  std::vector<LabeledSample> out;
  out.reserve(count);
  std::vector<std::uint8_t> record(kRecord);
  for (std::uintmax_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), kRecord);
    if (in.gcount() != static_cast<std::streamsize>(kRecord)) throw MalformedFileError("parse_cifar_binary: short read");
    if (record[0] > 9)
      throw CorruptRecordError("parse_cifar_binary: record " + std::to_string(i) + " has label " +
                               std::to_string(record[0]));
    LabeledSample s;
    s.id = static_cast<std::int64_t>(i);
    s.object_id = record[0];
    s.image = ImageTensor(3, 32, 32);
    for (Eigen::Index k = 0; k < 3072; ++k) s.image.data[k] = static_cast<float>(record[k + 1]) / 255.0f;
    out.push_back(std::move(s));
  }
  return out;
}

void write_cifar_binary(const std::filesystem::path& path, const std::vector<LabeledSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_cifar_binary: cannot open " + path.string());
  std::vector<std::uint8_t> record(3073);
  for (const auto& s : samples) {
    if (s.image.channels != 3 || s.image.height != 32 || s.image.width != 32)
      throw ShapeError("write_cifar_binary: images must be 3x32x32");
    if (s.object_id < 0 || s.object_id > 9) throw PreconditionError("write_cifar_binary: label outside [0,9]");
    record[0] = static_cast<std::uint8_t>(s.object_id);
    for (Eigen::Index k = 0; k < 3072; ++k)
      record[k + 1] = static_cast<std::uint8_t>(std::lround(std::clamp(s.image.data[k], 0.0f, 1.0f) * 255.0f));
    out.write(reinterpret_cast<const char*>(record.data()), 3073);
  }
}

}  // namespace ciper
