#include "ciper/cli.hpp"

#include "ciper/checkpoint.hpp"
#include "ciper/evaluation.hpp"
#include "ciper/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace ciper {

std::vector<std::string> ablation_config_keys() { return {"ablation.alphas", "ablation.seeds", "ablation.jobs"}; }

std::filesystem::path fresh_run_dir(const std::filesystem::path& root, const std::string& base) {
  std::filesystem::path dir = root / base;
  for (int k = 2; std::filesystem::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
  return dir;
}

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> assignments;
  std::optional<std::uint64_t> seed;
  std::string run_root;
  std::string run_dir;
};

struct Settings {
  Config config;
  TrainConfig train;
  ProbeConfig probe;
};

std::vector<std::string> known_keys() {
  auto keys = train_config_keys();
  for (const auto& k : probe_config_keys()) keys.push_back(k);
  for (const auto& k : ablation_config_keys()) keys.push_back(k);
  return keys;
}

// Layers: base text (e.g. a checkpoint's config), then --config, then --set, then --seed.
Settings resolve(const CommonOptions& opts, const std::string& base_text = {}) {
  Settings s;
  s.config = Config::parse(base_text);
  if (!opts.config_path.empty()) {
    const Config file = Config::load(opts.config_path);
    for (const auto& [key, value] : file.entries()) s.config.set(key, value);
  }
  for (const auto& a : opts.assignments) s.config.set_assignment(a);
  if (opts.seed) s.config.set("train.seed", std::to_string(*opts.seed));
  s.config.require_known(known_keys());
  s.train = train_config_from(s.config);
  s.probe = probe_config_from(s.config);
  return s;
}

Config resolved_snapshot(const Settings& s) {
  Config c = to_config(s.train);
  c.set("probe.epochs", std::to_string(s.probe.epochs));
  c.set("probe.batch_size", std::to_string(s.probe.batch_size));
  c.set("probe.base_lr", format_double(s.probe.base_lr));
  c.set("probe.decay_factor", format_double(s.probe.decay_factor));
  c.set("probe.decay_every", std::to_string(s.probe.decay_every));
  c.set("probe.weight_decay", format_double(s.probe.weight_decay));
  c.set("probe.momentum", format_double(s.probe.momentum));
  c.set("probe.nesterov", s.probe.nesterov ? "true" : "false");
  for (const auto& k : ablation_config_keys())
    if (auto v = s.config.get(k)) c.set(k, *v);
  return c;
}

std::string short_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h >> 32));
  return buf;
}

fs::path run_root(const CommonOptions& opts) {
  if (!opts.run_root.empty()) return opts.run_root;
  if (const char* env = std::getenv(kRunRootEnv); env && *env) return env;
  return "runs";
}

fs::path make_run_dir(const CommonOptions& opts, const std::string& command, const std::string& snapshot,
                      std::uint64_t seed) {
  fs::path dir;
  if (!opts.run_dir.empty()) {
    dir = opts.run_dir;
    if (fs::exists(dir) && !fs::is_empty(dir)) throw ConfigError("run directory " + dir.string() + " is not empty");
  } else {
    dir = fresh_run_dir(run_root(opts), command + "-seed" + std::to_string(seed) + "-" + short_hash(snapshot));
  }
  fs::create_directories(dir);
  return dir;
}

struct Manifest {
  fs::path dir;
  std::string command;
  std::uint64_t seed = 0;
  std::string config_text;
  std::map<std::string, std::vector<fs::path>> artifacts;

  void add(const std::string& kind, const fs::path& p) { artifacts[kind].push_back(p); }

  void write() const {
    nlohmann::ordered_json j;
    j["run_id"] = dir.filename().string();
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["seed"] = seed;
    j["config"] = config_text;
    nlohmann::ordered_json arts = nlohmann::ordered_json::object();
    for (const auto& [kind, paths] : artifacts) {
      auto& list = arts[kind] = nlohmann::ordered_json::array();
      for (const auto& p : paths) {
        if (!fs::exists(p)) throw std::runtime_error("artifact missing at close-out: " + p.string());
        list.push_back(fs::relative(p, dir).generic_string());
      }
    }
    j["artifacts"] = arts;
    std::ofstream out(dir / "run_manifest.json");
    out << j.dump(2) << '\n';
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Manifest begin_run(const CommonOptions& opts, const std::string& command, const Settings& s) {
  const std::string snapshot = resolved_snapshot(s).dump();
  Manifest m;
  m.dir = make_run_dir(opts, command, snapshot, s.train.seed);
  m.command = command;
  m.seed = s.train.seed;
  m.config_text = snapshot;
  write_text(m.dir / "config.cfg", snapshot);
  m.add("config", m.dir / "config.cfg");
  return m;
}

std::vector<ProbeTask> parse_tasks(const std::vector<std::string>& names) {
  std::vector<ProbeTask> out;
  for (const auto& n : names) out.push_back(probe_task_from_string(n));
  return out;
}

AblationOptions ablation_options(const Settings& s, const std::vector<std::string>& tasks, int jobs_flag) {
  AblationOptions o;
  o.probe = s.probe;
  o.tasks = parse_tasks(tasks);
  o.seeds.clear();
  for (int seed : s.config.get_int_list("ablation.seeds", {static_cast<int>(s.train.seed)})) {
    if (seed < 0) throw ConfigError("ablation.seeds must be non-negative");
    o.seeds.push_back(static_cast<std::uint64_t>(seed));
  }
  o.jobs = jobs_flag > 0 ? jobs_flag : static_cast<int>(s.config.get_int("ablation.jobs", 1));
  if (o.jobs < 1) throw ConfigError("ablation.jobs must be >= 1");
  return o;
}

void finish_ablation(Manifest& m, const std::vector<AblationRun>& runs, std::ostream& out) {
  for (const auto& r : runs) {
    m.add("runs", r.run_dir / "final.ckpt");
    m.add("metrics", r.run_dir / "metrics.csv");
    m.add("reports", r.run_dir / "results.csv");
  }
  const auto summary = summarize(runs);
  append_results(m.dir / "results.csv", summary);
  m.add("reports", m.dir / "results.csv");
  out << format_results_table(summary);
}

std::string checkpoint_config_text(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint " + path + " does not exist");
  return read_checkpoint_info(path).config_text;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CIPER: contrastive plus augmentation-parameter prediction training and evaluation", "ciper"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool with_run_dir = true) {
    sub->add_option("-c,--config", common.config_path, "Config file (key=value with [sections])");
    sub->add_option("--set", common.assignments, "Override a config key, e.g. --set train.alpha=0.5");
    sub->add_option("--seed", common.seed, "Overrides train.seed");
    if (with_run_dir) {
      sub->add_option("--run-root", common.run_root, std::string("Parent of fresh run directories (env ") +
                                                         kRunRootEnv + ", default ./runs)");
      sub->add_option("--run-dir", common.run_dir, "Explicit run directory; must be empty or absent");
    }
  };

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset to images plus manifest.csv");
  add_common(gen);

  auto* train = app.add_subcommand("train", "Train an encoder");
  add_common(train);
  std::optional<double> alpha;
  std::optional<std::string> objective;
  std::optional<int> epochs;
  std::string resume;
  train->add_option("--alpha", alpha, "Prediction loss weight");
  train->add_option("--objective", objective, "ciper | contrastive | predictive")
      ->check(CLI::IsMember({"ciper", "contrastive", "predictive"}));
  train->add_option("--epochs", epochs, "Training epochs");
  train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  const std::vector<std::string> all_tasks{"object_acc", "session_acc", "view_r2"};
  auto* probe = app.add_subcommand("probe", "Linear evaluation of a frozen encoder checkpoint");
  add_common(probe);
  std::string checkpoint;
  std::vector<std::string> tasks = all_tasks;
  probe->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
  probe->add_option("--tasks", tasks, "Probe tasks")->check(CLI::IsMember(all_tasks))->delimiter(',');

  auto* abl_alpha = app.add_subcommand("ablate-alpha", "Train and probe one run per alpha and seed");
  add_common(abl_alpha);
  std::vector<double> alphas;
  int jobs = 0;
  abl_alpha->add_option("--alphas", alphas, "Alpha values (default ablation.alphas or 0,0.5,1,2)")->delimiter(',');
  abl_alpha->add_option("--jobs", jobs, "Runs trained concurrently (default ablation.jobs or 1)");
  abl_alpha->add_option("--tasks", tasks, "Probe tasks")->check(CLI::IsMember(all_tasks))->delimiter(',');

  auto* abl_aug = app.add_subcommand("ablate-aug", "Retrain with each image augmentation disabled in turn");
  add_common(abl_aug);
  abl_aug->add_option("--jobs", jobs, "Runs trained concurrently (default ablation.jobs or 1)");
  abl_aug->add_option("--tasks", tasks, "Probe tasks")->check(CLI::IsMember(all_tasks))->delimiter(',');

  auto* exp = app.add_subcommand("export-embeddings", "Write encoder features per sample as CSV");
  add_common(exp);
  std::string split = "test";
  bool no_projection = false;
  exp->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
  exp->add_option("--split", split, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
  exp->add_flag("--no-projection", no_projection, "Skip the two principal-component columns");

  auto* report = app.add_subcommand("report", "Render results tables and loss/metric plots");
  add_common(report);
  std::vector<std::string> from;
  report->add_option("runs", from, "Run directories to collect results.csv and metrics.csv from")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      Settings s = resolve(common);
      if (s.train.data.kind != "synthetic") throw ConfigError("gen-data renders the synthetic dataset only");
      Manifest m = begin_run(common, "gen-data", s);
      write_dataset(m.dir / "data", build_dataset(s.train.data.scene));
      m.add("data", m.dir / "data" / "manifest.csv");
      m.write();
      out << m.dir.string() << '\n';
    } else if (train->parsed()) {
      if (alpha) common.assignments.push_back("train.alpha=" + format_double(*alpha));
      if (objective) common.assignments.push_back("train.objective=" + *objective);
      if (epochs) common.assignments.push_back("train.epochs=" + std::to_string(*epochs));
      Settings s = resolve(common);
      const TrainingData data = load_training_data(s.train.data);
      Manifest m = begin_run(common, "train", s);
      RunOptions options;
      if (!resume.empty()) options.resume_from = resume;
      try {
        const TrainResult r = run_training(s.train, data, m.dir, options);
        write_text(m.dir / "config.cfg", m.config_text);
        for (const auto& c : r.checkpoints) m.add("checkpoints", c);
        m.add("checkpoints", r.final_checkpoint);
        m.add("metrics", r.metrics_log);
        if (s.train.log_targets) m.add("metrics", m.dir / "targets.csv");
      } catch (const NonFiniteLossError& e) {
        err << "error: " << e.what() << "\ndump: " << e.dump_path << '\n';
        return kExitNonFinite;
      }
      m.write();
      out << m.dir.string() << '\n';
    } else if (probe->parsed()) {
      Settings s = resolve(common, checkpoint_config_text(checkpoint));
      const TrainingData data = load_training_data(s.train.data);
      const auto task_list = parse_tasks(tasks);
      Manifest m = begin_run(common, "probe", s);
      const auto reports = probe_checkpoint(checkpoint, data, task_list, s.probe, s.train.seed);
      append_results(m.dir / "results.csv", reports);
      m.add("reports", m.dir / "results.csv");
      m.write();
      out << format_results_table(reports);
    } else if (abl_alpha->parsed()) {
      Settings s = resolve(common);
      if (alphas.empty()) alphas = s.config.get_double_list("ablation.alphas", {0.0, 0.5, 1.0, 2.0});
      s.config.set("ablation.alphas", join_list(alphas));
      const AblationOptions o = ablation_options(s, tasks, jobs);
      const TrainingData data = load_training_data(s.train.data);
      Manifest m = begin_run(common, "ablate-alpha", s);
      finish_ablation(m, ablate_alpha(s.train, alphas, data, m.dir, o), out);
      m.write();
    } else if (abl_aug->parsed()) {
      Settings s = resolve(common);
      const AblationOptions o = ablation_options(s, tasks, jobs);
      const TrainingData data = load_training_data(s.train.data);
      Manifest m = begin_run(common, "ablate-aug", s);
      finish_ablation(m, ablate_augmentations(s.train, data, m.dir, o), out);
      m.write();
    } else if (exp->parsed()) {
      Settings s = resolve(common, checkpoint_config_text(checkpoint));
      const TrainingData data = load_training_data(s.train.data);
      auto model = load_model(checkpoint);
      std::vector<LabeledSample> samples;
      if (split != "test") samples.insert(samples.end(), data.train.begin(), data.train.end());
      if (split != "train") samples.insert(samples.end(), data.test.begin(), data.test.end());
      Manifest m = begin_run(common, "export-embeddings", s);
      export_embeddings(model->encoder, model->encoder_spec.output_dim, samples, m.dir / "embeddings.csv",
                        !no_projection);
      m.add("reports", m.dir / "embeddings.csv");
      m.write();
      out << m.dir.string() << '\n';
    } else if (report->parsed()) {
      std::vector<ProbeReport> results;
      std::vector<fs::path> metrics;
      for (const auto& dir : from) {
        if (!fs::is_directory(dir)) throw ConfigError(dir + " is not a directory");
        std::vector<fs::path> found;
        for (const auto& entry : fs::recursive_directory_iterator(dir)) found.push_back(entry.path());
        std::sort(found.begin(), found.end());
        for (const auto& p : found) {
          if (p.filename() == "results.csv") {
            for (auto r : read_results(p)) results.push_back(r);
          } else if (p.filename() == "metrics.csv") {
            metrics.push_back(p);
          }
        }
      }
      Settings s = resolve(common);
      Manifest m = begin_run(common, "report", s);
      const std::string table = format_results_table(results);
      write_text(m.dir / "report.txt", table);
      m.add("reports", m.dir / "report.txt");
      for (std::size_t i = 0; i < metrics.size(); ++i) {
        const fs::path img = m.dir / ("loss_" + std::to_string(i) + ".ppm");
        plot_losses(metrics[i], img);
        m.add("plots", img);
      }
      for (ProbeTask t : {ProbeTask::object_acc, ProbeTask::session_acc, ProbeTask::view_r2}) {
        if (std::none_of(results.begin(), results.end(), [&](const ProbeReport& r) { return r.task == t; }))
          continue;
        const fs::path img = m.dir / (to_string(t) + ".ppm");
        plot_results(results, t, img);
        m.add("plots", img);
      }
      m.write();
      out << table;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << "\ndump: " << e.dump_path << '\n';
    return kExitNonFinite;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace ciper
