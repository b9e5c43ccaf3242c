#include "ciper/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ciper {

AugmentationSchema::AugmentationSchema(std::string name, std::vector<ParamField> fields)
    : name_(std::move(name)), fields_(std::move(fields)) {
  for (auto& f : fields_) {
    if (f.dims <= 0) throw ConfigError("schema field " + f.name + ": dims must be positive");
    if (f.kind == FieldKind::categorical) {
      if (f.dims != 1 || f.num_classes < 2)
        throw ConfigError("schema field " + f.name + ": categorical needs dims 1 and >= 2 classes");
      categorical_classes_.push_back(f.num_classes);
    } else {
      total_dims_ += f.dims;
    }
    if (f.slot_names.empty()) {
      if (f.dims == 1) {
        f.slot_names.push_back(f.name);
      } else {
        for (int d = 0; d < f.dims; ++d) f.slot_names.push_back(f.name + "_" + std::to_string(d));
      }
    }
    if (static_cast<int>(f.slot_names.size()) != f.dims)
      throw ConfigError("schema field " + f.name + ": slot name count mismatch");
  }
}

AugmentationSchema AugmentationSchema::standard_image() {
  return AugmentationSchema(
      "image", {
                   {"crop", FieldKind::continuous, 4, 0, {"crop_x", "crop_y", "crop_h", "crop_w"}},
                   {"flip", FieldKind::binary, 1, 0, {"flip"}},
                   {"jitter", FieldKind::continuous, 4, 0, {"brightness", "contrast", "saturation", "hue"}},
                   {"grayscale", FieldKind::binary, 1, 0, {"grayscale"}},
               });
}

AugmentationSchema AugmentationSchema::dataset(bool viewpoint, bool session, int num_sessions) {
  std::vector<ParamField> fields;
  if (viewpoint)
    fields.push_back({"viewpoint", FieldKind::continuous, 3, 0, {"d_azimuth", "d_elevation", "d_distance"}});
  if (session) fields.push_back({"session", FieldKind::categorical, 1, num_sessions, {"target_session"}});
  if (fields.empty()) throw ConfigError("dataset schema: at least one of viewpoint/session required");
  std::string name = viewpoint && session ? "dataset" : viewpoint ? "viewpoint" : "session";
  return AugmentationSchema(std::move(name), std::move(fields));
}

int AugmentationSchema::predictor_width() const {
  int width = total_dims_;
  for (int k : categorical_classes_) width += k;
  return width;
}

std::vector<std::string> AugmentationSchema::slot_names() const {
  std::vector<std::string> names;
  for (const auto& f : fields_)
    if (f.kind != FieldKind::categorical) names.insert(names.end(), f.slot_names.begin(), f.slot_names.end());
  for (const auto& f : fields_)
    if (f.kind == FieldKind::categorical) names.push_back(f.slot_names.front());
  return names;
}

namespace {

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("aug policy: ") + what + " outside [0,1]");
}

}  // namespace

void AugPolicy::validate() const {
  check_probability(crop_p, "crop_p");
  check_probability(flip_p, "flip_p");
  check_probability(jitter_p, "jitter_p");
  check_probability(grayscale_p, "grayscale_p");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw ConfigError("aug policy: crop scale range must satisfy 0 < min <= max <= 1");
  if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max))
    throw ConfigError("aug policy: empty crop ratio range");
  if (!(brightness >= 0.0 && brightness < 1.0 && contrast >= 0.0 && contrast < 1.0 && saturation >= 0.0 &&
        saturation < 1.0))
    throw ConfigError("aug policy: jitter strengths must lie in [0,1)");
  if (!(hue >= 0.0 && hue <= 0.5)) throw ConfigError("aug policy: hue strength must lie in [0,0.5]");
}

ImageAugParams sample_image_augmentation(Rng& rng, const AugPolicy& policy) {
  policy.validate();
  ImageAugParams p;

  if (rng.bernoulli(policy.crop_p)) {
    // Random resized crop on the unit square: area fraction and log-uniform
    // aspect ratio, 10 attempts, falling back to the full frame.
    const double log_lo = std::log(policy.crop_ratio_min);
    const double log_hi = std::log(policy.crop_ratio_max);
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double scale = rng.uniform(policy.crop_scale_min, policy.crop_scale_max);
      const double ratio = std::exp(rng.uniform(log_lo, log_hi));
      const double w = std::sqrt(scale * ratio);
      const double h = std::sqrt(scale / ratio);
      if (w <= 1.0 && h <= 1.0) {
        p.crop = {rng.uniform() * (1.0 - w), rng.uniform() * (1.0 - h), h, w};
        break;
      }
    }
    p.applied.crop = !(p.crop == CropParams{});
  }

  if (rng.bernoulli(policy.flip_p)) {
    p.flip = 1;
    p.applied.flip = true;
  }

  if (rng.bernoulli(policy.jitter_p)) {
    p.jitter.brightness = rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness);
    p.jitter.contrast = rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast);
    p.jitter.saturation = rng.uniform(1.0 - policy.saturation, 1.0 + policy.saturation);
    p.jitter.hue = rng.uniform(-policy.hue, policy.hue);
    p.applied.jitter = !(p.jitter == JitterParams{});
  }

  if (rng.bernoulli(policy.grayscale_p)) {
    p.grayscale = 0;
    p.applied.grayscale = true;
  }
  return p;
}

namespace {

bool finite(const ImageAugParams& p) {
  return std::isfinite(p.crop.x) && std::isfinite(p.crop.y) && std::isfinite(p.crop.h) &&
         std::isfinite(p.crop.w) && std::isfinite(p.jitter.brightness) && std::isfinite(p.jitter.contrast) &&
         std::isfinite(p.jitter.saturation) && std::isfinite(p.jitter.hue);
}

ImageTensor crop_resize(const ImageTensor& src, const CropParams& crop, int out_h, int out_w) {
  ImageTensor out(src.channels, out_h, out_w);
  const double x0 = crop.x * src.width;
  const double y0 = crop.y * src.height;
  const double step_x = crop.w * src.width / out_w;
  const double step_y = crop.h * src.height / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp(y0 + (oy + 0.5) * step_y - 0.5, 0.0, src.height - 1.0);
    const int iy0 = static_cast<int>(fy);
    const int iy1 = std::min(iy0 + 1, src.height - 1);
    const float wy = static_cast<float>(fy - iy0);
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp(x0 + (ox + 0.5) * step_x - 0.5, 0.0, src.width - 1.0);
      const int ix0 = static_cast<int>(fx);
      const int ix1 = std::min(ix0 + 1, src.width - 1);
      const float wx = static_cast<float>(fx - ix0);
      for (int c = 0; c < src.channels; ++c) {
        const float top = src.at(c, iy0, ix0) * (1.0f - wx) + src.at(c, iy0, ix1) * wx;
        const float bottom = src.at(c, iy1, ix0) * (1.0f - wx) + src.at(c, iy1, ix1) * wx;
        out.at(c, oy, ox) = top * (1.0f - wy) + bottom * wy;
      }
    }
  }
  return out;
}

void flip_horizontal(ImageTensor& image) {
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width / 2; ++x) std::swap(image.at(c, y, x), image.at(c, y, image.width - 1 - x));
}

Eigen::ArrayXf luminance(const ImageTensor& image) {
  return kLumaR * image.plane(0) + kLumaG * image.plane(1) + kLumaB * image.plane(2);
}

void clamp_unit(ImageTensor& image) { image.data = image.data.max(0.0f).min(1.0f); }

void adjust_hue(ImageTensor& image, float shift) {
  auto r = image.plane(0);
  auto g = image.plane(1);
  auto b = image.plane(2);
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const float rv = r[i], gv = g[i], bv = b[i];
    const float maxc = std::max({rv, gv, bv});
    const float minc = std::min({rv, gv, bv});
    const float v = maxc;
    const float delta = maxc - minc;
    if (delta <= 0.0f) continue;  // achromatic pixels are unchanged by a hue shift
    const float s = delta / maxc;
    float h;
    if (maxc == rv) {
      h = (gv - bv) / delta;
    } else if (maxc == gv) {
      h = 2.0f + (bv - rv) / delta;
    } else {
      h = 4.0f + (rv - gv) / delta;
    }
    h = h / 6.0f + shift;
    h -= std::floor(h);
    const float h6 = h * 6.0f;
    const int sector = static_cast<int>(h6) % 6;
    const float f = h6 - std::floor(h6);
    const float p = v * (1.0f - s);
    const float q = v * (1.0f - s * f);
    const float t = v * (1.0f - s * (1.0f - f));
    switch (sector) {
      case 0: r[i] = v; g[i] = t; b[i] = p; break;
      case 1: r[i] = q; g[i] = v; b[i] = p; break;
      case 2: r[i] = p; g[i] = v; b[i] = t; break;
      case 3: r[i] = p; g[i] = q; b[i] = v; break;
      case 4: r[i] = t; g[i] = p; b[i] = v; break;
      default: r[i] = v; g[i] = p; b[i] = q; break;
    }
  }
}

void color_jitter(ImageTensor& image, const JitterParams& j) {
  if (j.brightness != 1.0) {
    image.data *= static_cast<float>(j.brightness);
    clamp_unit(image);
  }
  if (j.contrast != 1.0) {
    const float mean = luminance(image).mean();
    const auto c = static_cast<float>(j.contrast);
    image.data = c * image.data + (1.0f - c) * mean;
    clamp_unit(image);
  }
  if (j.saturation != 1.0) {
    const Eigen::ArrayXf gray = luminance(image);
    const auto s = static_cast<float>(j.saturation);
    for (int ch = 0; ch < 3; ++ch) image.plane(ch) = s * image.plane(ch) + (1.0f - s) * gray;
    clamp_unit(image);
  }
  if (j.hue != 0.0) adjust_hue(image, static_cast<float>(j.hue));
}

}  // namespace

ImageTensor apply_image_augmentation(const ImageTensor& image, const ImageAugParams& params, int out_height,
                                     int out_width) {
  if (!finite(params)) throw PreconditionError("apply_image_augmentation: non-finite parameters");
  const auto& c = params.crop;
  constexpr double kSlack = 1e-9;
  if (!(c.x >= 0.0 && c.y >= 0.0 && c.w > 0.0 && c.h > 0.0 && c.x + c.w <= 1.0 + kSlack &&
        c.y + c.h <= 1.0 + kSlack))
    throw PreconditionError("apply_image_augmentation: crop rectangle out of bounds");
  if (params.flip != 0 && params.flip != 1) throw PreconditionError("apply_image_augmentation: flip must be 0/1");
  if (params.grayscale != 0 && params.grayscale != 1)
    throw PreconditionError("apply_image_augmentation: grayscale must be 0/1");
  const bool colour_ops = !(params.jitter == JitterParams{}) || params.grayscale == 0;
  if (colour_ops && image.channels != 3)
    throw ShapeError("apply_image_augmentation: color ops need 3 channels");

  ImageTensor out = crop_resize(image, c, out_height, out_width);
  if (params.flip == 1) flip_horizontal(out);
  color_jitter(out, params.jitter);
  if (params.grayscale == 0) {
    const Eigen::ArrayXf gray = luminance(out);
    for (int ch = 0; ch < 3; ++ch) out.plane(ch) = gray;
  }
  clamp_unit(out);
  return out;
}

Eigen::VectorXd encode_parameters(const ImageAugParams& p, const AugmentationSchema& schema) {
  if (!(schema == AugmentationSchema::standard_image()))
    throw ShapeError("encode_parameters: schema '" + schema.name() + "' does not describe image parameters");
  Eigen::VectorXd r(10);
  r << p.crop.x, p.crop.y, p.crop.h, p.crop.w, p.flip, p.jitter.brightness, p.jitter.contrast, p.jitter.saturation,
      p.jitter.hue, p.grayscale;
  return r;
}

ImageAugParams decode_image_parameters(const Eigen::VectorXd& r, const AugmentationSchema& schema) {
  if (!(schema == AugmentationSchema::standard_image()) || r.size() != 10)
    throw ShapeError("decode_image_parameters: record does not match the image schema");
  ImageAugParams p;
  p.crop = {r[0], r[1], r[2], r[3]};
  p.flip = static_cast<int>(r[4]);
  p.jitter = {r[5], r[6], r[7], r[8]};
  p.grayscale = static_cast<int>(r[9]);
  if (r[4] != p.flip || r[9] != p.grayscale) throw ShapeError("decode_image_parameters: non-binary indicator");
  p.applied = {!(p.crop == CropParams{}), p.flip == 1, !(p.jitter == JitterParams{}), p.grayscale == 0};
  return p;
}

TargetBatch normalize_targets(const Eigen::MatrixXd& raw) {
  if (raw.rows() < 2) throw PreconditionError("normalize_targets: need N >= 2");
  TargetBatch t;
  t.raw = raw;
  t.labels.resize(raw.rows(), 0);
  const double n = static_cast<double>(raw.rows());
  t.mean = raw.colwise().mean().transpose();
  const Eigen::MatrixXd centered = raw.rowwise() - t.mean.transpose();
  t.std = (centered.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  t.normalized.resize(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    if (t.std[j] <= kTargetEpsilon) {
      t.normalized.col(j).setZero();
    } else {
      t.normalized.col(j) = centered.col(j) / t.std[j];
    }
  }
  return t;
}

TargetBatch TargetNormalizer::operator()(const Eigen::MatrixXd& records, const AugmentationSchema& schema) {
  if (records.cols() != schema.record_width())
    throw ShapeError("TargetNormalizer: record width does not match schema");
  const int m = schema.total_dims();
  const Eigen::MatrixXd continuous = records.leftCols(m);
  TargetBatch t;
  if (mode_ == TargetNormalization::per_batch || m == 0) {
    t = normalize_targets(continuous);
  } else {
    if (records.rows() < 1) throw PreconditionError("TargetNormalizer: empty batch");
    if (mean_.size() != m) {
      mean_ = Eigen::VectorXd::Zero(m);
      m2_ = Eigen::VectorXd::Zero(m);
      count_ = 0.0;
    }
    // Chan et al. parallel merge of the batch moments into the running moments.
    const double nb = static_cast<double>(records.rows());
    const Eigen::VectorXd batch_mean = continuous.colwise().mean().transpose();
    const Eigen::VectorXd batch_m2 = (continuous.rowwise() - batch_mean.transpose()).colwise().squaredNorm().transpose();
    const double total = count_ + nb;
    const Eigen::VectorXd delta = batch_mean - mean_;
    mean_ += delta * (nb / total);
    m2_ += batch_m2 + delta.cwiseAbs2() * (count_ * nb / total);
    count_ = total;
    t.raw = continuous;
    t.mean = mean_;
    t.std = (m2_ / count_).cwiseSqrt();
    t.normalized.resize(continuous.rows(), m);
    for (int j = 0; j < m; ++j) {
      if (t.std[j] <= kTargetEpsilon) {
        t.normalized.col(j).setZero();
      } else {
        t.normalized.col(j) = (continuous.col(j).array() - t.mean[j]) / t.std[j];
      }
    }
  }
  const int k = schema.num_categorical();
  t.labels.resize(records.rows(), k);
  for (int c = 0; c < k; ++c) {
    for (Eigen::Index i = 0; i < records.rows(); ++i) {
      const double v = records(i, m + c);
      const int label = static_cast<int>(v);
      if (label != v || label < 0 || label >= schema.categorical_classes()[c])
        throw ShapeError("TargetNormalizer: categorical slot holds an invalid class index");
      t.labels(i, c) = label;
    }
  }
  return t;
}

void TargetNormalizer::restore(double count, Eigen::VectorXd mean, Eigen::VectorXd m2) {
  count_ = count;
  mean_ = std::move(mean);
  m2_ = std::move(m2);
}

std::string target_log_header(const AugmentationSchema& schema) {
  std::string header = "step,view,sample";
  for (const auto& name : schema.slot_names()) header += "," + name;
  return header;
}

void write_target_row(std::ostream& out, std::int64_t step, int view, std::int64_t sample,
                      const Eigen::VectorXd& record) {
  char buf[32];
  out << step << ',' << view << ',' << sample;
  for (Eigen::Index i = 0; i < record.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", record[i]);
    out << ',' << buf;
  }
  out << '\n';
}

}  // namespace ciper
