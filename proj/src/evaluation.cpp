#include "ciper/evaluation.hpp"

#include "ciper/checkpoint.hpp"
#include "ciper/image.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace ciper {

std::string to_string(ProbeTask t) {
  switch (t) {
    case ProbeTask::object_acc: return "object_acc";
    case ProbeTask::session_acc: return "session_acc";
    default: return "view_r2";
  }
}

ProbeTask probe_task_from_string(const std::string& s) {
  if (s == "object_acc") return ProbeTask::object_acc;
  if (s == "session_acc") return ProbeTask::session_acc;
  if (s == "view_r2") return ProbeTask::view_r2;
  throw ConfigError("unknown probe task '" + s + "'");
}

void ProbeConfig::validate() const {
  if (epochs < 1) throw ConfigError("probe.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("probe.batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("probe.base_lr must be positive");
  if (!(decay_factor >= 1.0) || decay_every < 1) throw ConfigError("probe: decay_factor >= 1 and decay_every >= 1");
  if (!(weight_decay >= 0.0) || !(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("probe: weight_decay must be >= 0 and momentum in [0,1)");
}

std::vector<std::string> probe_config_keys() {
  return {"probe.epochs",      "probe.batch_size",   "probe.base_lr", "probe.decay_factor",
          "probe.decay_every", "probe.weight_decay", "probe.momentum", "probe.nesterov"};
}

ProbeConfig probe_config_from(const Config& cfg) {
  const auto known = probe_config_keys();
  for (const auto& [key, value] : cfg.entries())
    if (key.rfind("probe.", 0) == 0 && std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key '" + key + "'");
  ProbeConfig pc;
  pc.epochs = static_cast<int>(cfg.get_int("probe.epochs", pc.epochs));
  pc.batch_size = static_cast<int>(cfg.get_int("probe.batch_size", pc.batch_size));
  pc.base_lr = cfg.get_double("probe.base_lr", pc.base_lr);
  pc.decay_factor = cfg.get_double("probe.decay_factor", pc.decay_factor);
  pc.decay_every = static_cast<int>(cfg.get_int("probe.decay_every", pc.decay_every));
  pc.weight_decay = cfg.get_double("probe.weight_decay", pc.weight_decay);
  pc.momentum = cfg.get_double("probe.momentum", pc.momentum);
  pc.nesterov = cfg.get_bool("probe.nesterov", pc.nesterov);
  pc.validate();
  return pc;
}

Eigen::MatrixXd LinearProbe::transform(const Eigen::MatrixXd& features) const {
  if (features.cols() != feature_mean.cols()) throw ShapeError("probe: feature dimension mismatch");
  return (features.rowwise() - feature_mean).array().rowwise() * feature_scale.array();
}

Eigen::MatrixXd LinearProbe::predict(const Eigen::MatrixXd& features) const {
  Eigen::MatrixXd out = transform(features) * weight;
  out.rowwise() += bias;
  return out;
}

std::vector<int> LinearProbe::classify(const Eigen::MatrixXd& features) const {
  const Eigen::MatrixXd logits = predict(features);
  std::vector<int> out(static_cast<size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) logits.row(i).maxCoeff(&out[static_cast<size_t>(i)]);
  return out;
}

namespace {

LinearProbe prepare_probe(const Eigen::MatrixXd& features, Eigen::Index outputs, ProbeTask task) {
  if (features.rows() < 2) throw PreconditionError("probe: need at least 2 samples");
  if (!features.allFinite()) throw PreconditionError("probe: non-finite features");
  LinearProbe p;
  p.task = task;
  p.feature_mean = features.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((features.rowwise() - p.feature_mean).colwise().squaredNorm() / static_cast<double>(features.rows()))
          .array()
          .sqrt();
  const double dim_scale = 1.0 / std::sqrt(static_cast<double>(features.cols()));
  p.feature_scale = sd.unaryExpr([&](double s) { return s > 1e-12 ? dim_scale / s : 0.0; });
  p.weight = Eigen::MatrixXd::Zero(features.cols(), outputs);
  p.bias = Eigen::RowVectorXd::Zero(outputs);
  return p;
}

// grad_fn(x_batch, rows, logits) returns dL/dlogits for the batch.
template <typename GradFn>
void train_probe(LinearProbe& p, const Eigen::MatrixXd& x, const ProbeConfig& cfg, std::uint64_t seed,
                 GradFn grad_fn) {
  cfg.validate();
  nn::Param<double> w("probe.weight", p.weight);
  nn::Param<double> b("probe.bias", Eigen::MatrixXd(p.bias));
  std::vector<nn::Param<double>*> params{&w, &b};
  Sgd<double> opt({cfg.momentum, cfg.weight_decay, cfg.nesterov});
  const auto n = static_cast<int>(x.rows());
  std::vector<int> order(static_cast<size_t>(n));
  Eigen::MatrixXd xb;
  std::vector<int> rows;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_decay_lr(epoch, cfg.base_lr, cfg.decay_factor, cfg.decay_every);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x9b0e, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int end = std::min(n, start + cfg.batch_size);
      rows.assign(order.begin() + start, order.begin() + end);
      xb.resize(end - start, x.cols());
      for (int r = 0; r < end - start; ++r) xb.row(r) = x.row(rows[static_cast<size_t>(r)]);
      Eigen::MatrixXd logits = xb * w.value;
      logits.rowwise() += b.value.row(0);
      const Eigen::MatrixXd g = grad_fn(rows, logits);
      w.grad.noalias() = xb.transpose() * g;
      b.grad = g.colwise().sum();
      opt.step(params, lr);
    }
  }
  p.weight = w.value;
  p.bias = b.value.row(0);
}

}  // namespace

LinearProbe fit_classifier(const Eigen::MatrixXd& features, std::span<const int> labels, int num_classes,
                           const ProbeConfig& cfg, std::uint64_t seed, ProbeTask task) {
  if (task == ProbeTask::view_r2) throw PreconditionError("fit_classifier: view_r2 is a regression task");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw ShapeError("fit_classifier: label count differs from feature rows");
  if (num_classes < 2) throw PreconditionError("fit_classifier: need at least 2 classes");
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw PreconditionError("fit_classifier: label out of range");
  LinearProbe p = prepare_probe(features, num_classes, task);
  const Eigen::MatrixXd x = p.transform(features);
  train_probe(p, x, cfg, seed, [&](const std::vector<int>& rows, const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd g(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double m = logits.row(r).maxCoeff();
      g.row(r) = (logits.row(r).array() - m).exp();
      g.row(r) /= g.row(r).sum();
      g(r, labels[static_cast<size_t>(rows[static_cast<size_t>(r)])]) -= 1.0;
    }
    return Eigen::MatrixXd(g / static_cast<double>(logits.rows()));
  });
  return p;
}

LinearProbe fit_regressor(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets, const ProbeConfig& cfg,
                          std::uint64_t seed) {
  if (targets.rows() != features.rows()) throw ShapeError("fit_regressor: target rows differ from feature rows");
  if (targets.cols() < 1 || !targets.allFinite()) throw PreconditionError("fit_regressor: invalid targets");
  LinearProbe p = prepare_probe(features, targets.cols(), ProbeTask::view_r2);
  const Eigen::MatrixXd x = p.transform(features);
  train_probe(p, x, cfg, seed, [&](const std::vector<int>& rows, const Eigen::MatrixXd& pred) {
    Eigen::MatrixXd g = pred;
    for (Eigen::Index r = 0; r < pred.rows(); ++r) g.row(r) -= targets.row(rows[static_cast<size_t>(r)]);
    return Eigen::MatrixXd(g * (2.0 / static_cast<double>(pred.size())));
  });
  return p;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw ShapeError("accuracy: size mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double r_squared(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw ShapeError("r_squared: shape mismatch");
  if (targets.rows() < 2) throw PreconditionError("r_squared: need at least 2 rows");
  const double ss_tot = (targets.rowwise() - targets.colwise().mean()).squaredNorm();
  if (!(ss_tot > 0.0)) throw PreconditionError("r_squared: targets have zero variance in every dimension");
  return 1.0 - (predictions - targets).squaredNorm() / ss_tot;
}

Eigen::MatrixXd view_targets(std::span<const LabeledSample> samples) {
  Eigen::MatrixXd t(static_cast<Eigen::Index>(samples.size()), 4);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const View& v = samples[i].view;
    t.row(static_cast<Eigen::Index>(i)) << std::cos(v.azimuth), std::sin(v.azimuth), v.elevation, v.distance;
  }
  return t;
}

ProbeReport aggregate(std::span<const ProbeReport> runs) {
  if (runs.empty()) throw PreconditionError("aggregate: no runs");
  ProbeReport out;
  out.task = runs.front().task;
  out.checkpoint = runs.front().checkpoint;
  out.num_seeds = static_cast<int>(runs.size());
  double sum = 0.0;
  for (const auto& r : runs) {
    if (r.task != out.task) throw PreconditionError("aggregate: mixed tasks");
    sum += r.value;
  }
  out.value = sum / static_cast<double>(runs.size());
  double ss = 0.0;
  for (const auto& r : runs) ss += (r.value - out.value) * (r.value - out.value);
  out.std = std::sqrt(ss / static_cast<double>(runs.size()));
  return out;
}

namespace {

Eigen::MatrixXd encode_split(nn::Sequential<float>& encoder, std::span<const LabeledSample> samples) {
  std::vector<ImageTensor> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.image);
  return encode_images(encoder, images).cast<double>();
}

std::vector<int> object_labels(std::span<const LabeledSample> samples) {
  std::vector<int> out;
  for (const auto& s : samples) out.push_back(s.object_id);
  return out;
}

}  // namespace

std::vector<ProbeReport> probe_encoder(nn::Sequential<float>& encoder, const TrainingData& data,
                                       std::span<const ProbeTask> tasks, const ProbeConfig& cfg, std::uint64_t seed) {
  if (data.train.size() < 2 || data.test.size() < 2) throw ConfigError("probe: need train and test splits");
  const bool synthetic = data.renderer.has_value();
  if (!synthetic) {
    std::vector<ProbeReport> out;
    if (std::find(tasks.begin(), tasks.end(), ProbeTask::object_acc) == tasks.end()) return out;
    const Eigen::MatrixXd h_train = encode_split(encoder, data.train);
    const Eigen::MatrixXd h_test = encode_split(encoder, data.test);
    const auto probe = fit_classifier(h_train, object_labels(data.train), data.num_objects, cfg, seed);
    out.push_back({ProbeTask::object_acc, accuracy(probe.classify(h_test), object_labels(data.test)), 0.0, 1, ""});
    return out;
  }

  if (data.test.size() < 4) throw ConfigError("probe: test split too small to halve");
  std::vector<std::size_t> order(data.test.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5e5b));
  rng.shuffle(order.begin(), order.end());
  const std::size_t half = order.size() / 2;
  std::vector<LabeledSample> fit_set, score_set;
  for (std::size_t k = 0; k < order.size(); ++k) (k < half ? fit_set : score_set).push_back(data.test[order[k]]);
  const Eigen::MatrixXd h_fit = encode_split(encoder, fit_set);
  const Eigen::MatrixXd h_score = encode_split(encoder, score_set);

  const auto test_sessions = data.renderer->config().test_sessions();
  auto session_labels = [&](std::span<const LabeledSample> samples) {
    std::vector<int> out;
    for (const auto& s : samples)
      out.push_back(static_cast<int>(std::find(test_sessions.begin(), test_sessions.end(), s.session_id) -
                                     test_sessions.begin()));
    return out;
  };

  std::vector<ProbeReport> out;
  for (ProbeTask task : tasks) {
    ProbeReport r;
    r.task = task;
    if (task == ProbeTask::object_acc) {
      const auto probe = fit_classifier(h_fit, object_labels(fit_set), data.num_objects, cfg, seed);
      r.value = accuracy(probe.classify(h_score), object_labels(score_set));
    } else if (task == ProbeTask::view_r2) {
      Eigen::MatrixXd t_fit = view_targets(fit_set);
      Eigen::MatrixXd t_score = view_targets(score_set);
      const Eigen::RowVectorXd mean = t_fit.colwise().mean();
      const Eigen::RowVectorXd sd =
          ((t_fit.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(t_fit.rows())).array().sqrt();
      const Eigen::RowVectorXd inv = sd.unaryExpr([](double s) { return s > 1e-12 ? 1.0 / s : 0.0; });
      t_fit = (t_fit.rowwise() - mean).array().rowwise() * inv.array();
      t_score = (t_score.rowwise() - mean).array().rowwise() * inv.array();
      const auto probe = fit_regressor(h_fit, t_fit, cfg, seed);
      r.value = r_squared(probe.predict(h_score), t_score);
    } else {
      if (test_sessions.size() < 2) continue;
      const auto probe = fit_classifier(h_fit, session_labels(fit_set), static_cast<int>(test_sessions.size()), cfg,
                                        seed, ProbeTask::session_acc);
      r.value = accuracy(probe.classify(h_score), session_labels(score_set));
    }
    out.push_back(r);
  }
  return out;
}

std::vector<ProbeReport> probe_checkpoint(const std::filesystem::path& checkpoint, const TrainingData& data,
                                          std::span<const ProbeTask> tasks, const ProbeConfig& cfg,
                                          std::uint64_t seed) {
  auto model = load_model(checkpoint);
  auto reports = probe_encoder(model->encoder, data, tasks, cfg, seed);
  for (auto& r : reports) r.checkpoint = checkpoint.string();
  return reports;
}

void append_results(const std::filesystem::path& path, std::span<const ProbeReport> reports) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  if (fresh) out << kResultsHeader << '\n';
  char line[64];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, ",%.9g,%.9g,%d\n", r.value, r.std, r.num_seeds);
    out << r.checkpoint << ',' << to_string(r.task) << line;
  }
}

std::vector<ProbeReport> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    throw MalformedFileError(path.string() + ": missing results header");
  std::vector<ProbeReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // The checkpoint path may itself contain commas; the last four fields are fixed.
    std::vector<std::size_t> commas;
    for (std::size_t i = 0; i < line.size(); ++i)
      if (line[i] == ',') commas.push_back(i);
    if (commas.size() < 4) throw MalformedFileError(path.string() + ": bad row '" + line + "'");
    const std::size_t c = commas.size();
    ProbeReport r;
    r.checkpoint = line.substr(0, commas[c - 4]);
    r.task = probe_task_from_string(line.substr(commas[c - 4] + 1, commas[c - 3] - commas[c - 4] - 1));
    try {
      r.value = std::stod(line.substr(commas[c - 3] + 1));
      r.std = std::stod(line.substr(commas[c - 2] + 1));
      r.num_seeds = std::stoi(line.substr(commas[c - 1] + 1));
    } catch (const std::exception&) {
      throw MalformedFileError(path.string() + ": bad row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

Eigen::MatrixXd principal_projection(const Eigen::MatrixXd& data, int components) {
  if (data.rows() < 2 || components < 1 || components > data.cols())
    throw PreconditionError("principal_projection: need >= 2 rows and 1 <= components <= dims");
  const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::MatrixXd dirs(data.cols(), components);
  for (int k = 0; k < components; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(data.cols() - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    dirs.col(k) = v;
  }
  Eigen::MatrixXd proj = centered * dirs;
  proj.rowwise() -= proj.colwise().mean();
  return proj;
}

void export_embeddings(nn::Sequential<float>& encoder, int output_dim, std::span<const LabeledSample> samples,
                       const std::filesystem::path& path, bool with_projection) {
  if (samples.empty()) throw PreconditionError("export_embeddings: no samples");
  const Eigen::MatrixXd h = encode_split(encoder, samples);
  if (h.cols() != output_dim) throw ShapeError("export_embeddings: encoder output does not match checkpoint dims");
  Eigen::MatrixXd proj;
  if (with_projection) proj = principal_projection(h, 2);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "id,object_id,session_id,azimuth,elevation,distance";
  for (Eigen::Index j = 0; j < h.cols(); ++j) out << ",h_" << j + 1;
  if (with_projection) out << ",pc_1,pc_2";
  out << '\n';
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    out << buf;
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out << s.id << ',' << s.object_id << ',' << s.session_id;
    put(s.view.azimuth);
    put(s.view.elevation);
    put(s.view.distance);
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < h.cols(); ++j) put(h(row, j));
    if (with_projection) {
      put(proj(row, 0));
      put(proj(row, 1));
    }
    out << '\n';
  }
}

namespace {

std::string alpha_label(double alpha) { return "alpha=" + format_double(alpha); }

AblationRun train_and_probe(const TrainConfig& cfg, const TrainingData& data, const std::filesystem::path& dir,
                            const std::string& label, const AblationOptions& options) {
  AblationRun run;
  run.label = label;
  run.alpha = cfg.alpha;
  run.seed = cfg.seed;
  run.run_dir = dir;
  const TrainResult tr = run_training(cfg, data, dir);
  run.reports = probe_checkpoint(tr.final_checkpoint, data, options.tasks, options.probe, cfg.seed);
  append_results(dir / "results.csv", run.reports);
  return run;
}

struct Job {
  TrainConfig config;
  std::filesystem::path dir;
  std::string label;
};

std::vector<AblationRun> run_jobs(const std::vector<Job>& jobs, const TrainingData& data,
                                  const AblationOptions& options) {
  std::vector<AblationRun> out(jobs.size());
  const int workers = std::max(1, std::min<int>(options.jobs, static_cast<int>(jobs.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i)
      out[i] = train_and_probe(jobs[i].config, data, jobs[i].dir, jobs[i].label, options);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) {
        try {
          out[i] = train_and_probe(jobs[i].config, data, jobs[i].dir, jobs[i].label, options);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace

std::vector<AblationRun> ablate_alpha(const TrainConfig& base, std::span<const double> alphas,
                                      const TrainingData& data, const std::filesystem::path& root,
                                      const AblationOptions& options) {
  if (alphas.empty() || options.seeds.empty()) throw ConfigError("ablate-alpha: need at least one alpha and seed");
  std::vector<Job> jobs;
  for (double a : alphas) {
    for (auto seed : options.seeds) {
      TrainConfig cfg = base;
      cfg.objective = Objective::ciper;
      cfg.alpha = a;
      cfg.seed = seed;
      cfg.validate();
      jobs.push_back({cfg, root / ("alpha_" + format_double(a) + "_seed_" + std::to_string(seed)), alpha_label(a)});
    }
  }
  return run_jobs(jobs, data, options);
}

std::vector<AblationRun> ablate_augmentations(const TrainConfig& base, const TrainingData& data,
                                              const std::filesystem::path& root, const AblationOptions& options) {
  if (options.seeds.empty()) throw ConfigError("ablate-aug: need at least one seed");
  struct Variant {
    std::string label;
    double AugPolicy::*gate;
  };
  const Variant variants[] = {{"full", nullptr},
                              {"no_crop", &AugPolicy::crop_p},
                              {"no_flip", &AugPolicy::flip_p},
                              {"no_jitter", &AugPolicy::jitter_p},
                              {"no_grayscale", &AugPolicy::grayscale_p}};
  std::vector<Job> jobs;
  for (const auto& v : variants) {
    for (auto seed : options.seeds) {
      TrainConfig cfg = base;
      cfg.aug_mode = AugMode::image;
      cfg.seed = seed;
      if (v.gate) cfg.policy.*v.gate = 0.0;
      cfg.validate();
      jobs.push_back({cfg, root / (v.label + "_seed_" + std::to_string(seed)), v.label});
    }
  }
  return run_jobs(jobs, data, options);
}

std::vector<ProbeReport> summarize(std::span<const AblationRun> runs) {
  std::vector<std::string> labels;
  std::map<std::pair<std::string, ProbeTask>, std::vector<ProbeReport>> groups;
  std::vector<std::pair<std::string, ProbeTask>> order;
  for (const auto& run : runs) {
    for (const auto& r : run.reports) {
      const auto key = std::make_pair(run.label, r.task);
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(r);
    }
  }
  std::vector<ProbeReport> out;
  for (const auto& key : order) {
    ProbeReport agg = aggregate(groups[key]);
    agg.checkpoint = key.first;
    out.push_back(agg);
  }
  return out;
}

std::string format_results_table(std::span<const ProbeReport> reports) {
  std::size_t width = 10;
  for (const auto& r : reports) width = std::max(width, r.checkpoint.size());
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s  %-11s  %10s  %9s  %5s\n", static_cast<int>(width), "checkpoint", "task",
                "value", "std", "seeds");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-*s  %-11s  %10.4f  %9.4f  %5d\n", static_cast<int>(width),
                  r.checkpoint.c_str(), to_string(r.task).c_str(), r.value, r.std, r.num_seeds);
    out << line;
  }
  return out.str();
}

namespace {

struct Canvas {
  ImageTensor image;
  int left = 40, right = 12, top = 12, bottom = 28;

  Canvas(int w, int h) {
    if (w < 80 || h < 60) throw PreconditionError("plot: canvas too small");
    image.channels = 3;
    image.height = h;
    image.width = w;
    image.data = Eigen::ArrayXf::Ones(3 * Eigen::Index{w} * h);
  }
  int plot_w() const { return image.width - left - right; }
  int plot_h() const { return image.height - top - bottom; }

  void pixel(int x, int y, const float (&rgb)[3]) {
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
    for (int c = 0; c < 3; ++c) image.at(c, y, x) = rgb[c];
  }
  void line(int x0, int y0, int x1, int y1, const float (&rgb)[3]) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      pixel(x0, y0, rgb);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  void rect(int x0, int y0, int x1, int y1, const float (&rgb)[3]) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) pixel(x, y, rgb);
  }
  void axes() {
    const float grey[3] = {0.2f, 0.2f, 0.2f};
    line(left, top, left, top + plot_h(), grey);
    line(left, top + plot_h(), left + plot_w(), top + plot_h(), grey);
  }
  int map_x(double t) const { return left + static_cast<int>(std::lround(t * plot_w())); }
  int map_y(double t) const { return top + plot_h() - static_cast<int>(std::lround(t * plot_h())); }
};

constexpr float kPalette[][3] = {{0.12f, 0.47f, 0.71f}, {1.0f, 0.5f, 0.05f},  {0.0f, 0.0f, 0.0f},
                                 {0.17f, 0.63f, 0.17f}, {0.84f, 0.15f, 0.16f}, {0.58f, 0.4f, 0.74f}};

}  // namespace

void plot_losses(const std::filesystem::path& metrics_csv, const std::filesystem::path& image_path, int width,
                 int height) {
  std::ifstream in(metrics_csv);
  if (!in) throw std::runtime_error("cannot open " + metrics_csv.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,epoch,lr,l_c,l_p,total")
    throw MalformedFileError(metrics_csv.string() + ": unexpected metrics header");
  std::vector<std::array<double, 3>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<double, 6> f{};
    std::istringstream ss(line);
    std::string cell;
    for (auto& v : f) {
      if (!std::getline(ss, cell, ',')) throw MalformedFileError(metrics_csv.string() + ": short row");
      v = std::stod(cell);
    }
    rows.push_back({f[3], f[4], f[5]});
  }
  Canvas canvas(width, height);
  canvas.axes();
  if (!rows.empty()) {
    double lo = rows[0][0], hi = rows[0][0];
    for (const auto& r : rows)
      for (double v : r) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double span_x = std::max<std::size_t>(1, rows.size() - 1);
    for (int series = 0; series < 3; ++series) {
      for (std::size_t i = 1; i < rows.size(); ++i) {
        canvas.line(canvas.map_x((i - 1) / span_x), canvas.map_y((rows[i - 1][series] - lo) / (hi - lo)),
                    canvas.map_x(i / span_x), canvas.map_y((rows[i][series] - lo) / (hi - lo)), kPalette[series]);
      }
      // Legend swatch per series along the bottom margin.
      const int x = canvas.left + 10 + series * 24;
      canvas.rect(x, height - 14, x + 14, height - 6, kPalette[series]);
    }
  }
  write_netpbm(image_path, canvas.image);
}

void plot_results(std::span<const ProbeReport> reports, ProbeTask task, const std::filesystem::path& image_path,
                  int width, int height) {
  std::vector<ProbeReport> selected;
  for (const auto& r : reports)
    if (r.task == task) selected.push_back(r);
  Canvas canvas(width, height);
  canvas.axes();
  if (!selected.empty()) {
    double hi = task == ProbeTask::view_r2 ? 1.0 : 100.0;
    double lo = 0.0;
    for (const auto& r : selected) lo = std::min(lo, r.value - r.std);
    const double slot = static_cast<double>(canvas.plot_w()) / static_cast<double>(selected.size());
    const float black[3] = {0.f, 0.f, 0.f};
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const auto& r = selected[i];
      const int x0 = canvas.left + static_cast<int>(slot * static_cast<double>(i) + slot * 0.15);
      const int x1 = canvas.left + static_cast<int>(slot * static_cast<double>(i + 1) - slot * 0.15);
      const auto y = [&](double v) { return canvas.map_y((std::clamp(v, lo, hi) - lo) / (hi - lo)); };
      canvas.rect(x0, y(0.0), x1, y(r.value), kPalette[i % std::size(kPalette)]);
      const int xm = (x0 + x1) / 2;
      canvas.line(xm, y(r.value - r.std), xm, y(r.value + r.std), black);
    }
  }
  write_netpbm(image_path, canvas.image);
}

}  // namespace ciper
