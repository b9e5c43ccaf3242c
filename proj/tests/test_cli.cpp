#include "ciper/cli.hpp"

#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace ciper;
using ciper::test::TempDir;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyConfig = R"([train]
epochs = 1
batch_size = 8
checkpoint_every = 0

[model]
widths = 8,16
output_dim = 16
projector_hidden = 32
z_dim = 16
predictor_hidden = 16

[data]
num_objects = 2
num_sessions = 4
samples_per_cell = 4
test_samples_per_cell = 4
image_size = 16

[probe]
epochs = 2
)";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path only_child(const fs::path& dir) {
  std::vector<fs::path> kids;
  for (const auto& e : fs::directory_iterator(dir)) kids.push_back(e.path());
  REQUIRE(kids.size() == 1);
  return kids.front();
}

bool empty_dir(const fs::path& dir) { return !fs::exists(dir) || fs::is_empty(dir); }

}  // namespace

TEST_CASE("usage and configuration errors") {
  TempDir tmp("cli_err");
  const std::string root = (tmp / "runs").string();
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"fly"}).code == kExitUsage);
  CHECK(run({"train", "--run-root", root, "--bogus"}).code == kExitUsage);
  CHECK(run({"probe", "--run-root", root}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(empty_dir(tmp / "runs"));

  {
    std::ofstream cfg(tmp / "bad.cfg");
    cfg << "[train]\nalphaa = 1\n";
  }
  const auto r = run({"train", "--run-root", root, "--config", (tmp / "bad.cfg").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("train.alphaa") != std::string::npos);
  CHECK(run({"train", "--run-root", root, "--set", "train.epochs=zero"}).code == kExitConfig);
  CHECK(run({"train", "--run-root", root, "--set", "nosuch.key=1"}).code == kExitConfig);
  CHECK(run({"probe", "--run-root", root, "--checkpoint", (tmp / "none.ckpt").string()}).code == kExitConfig);
  CHECK(empty_dir(tmp / "runs"));
}

TEST_CASE("fresh run directories never collide") {
  TempDir tmp("cli_fresh");
  CHECK(fresh_run_dir(tmp.path(), "train") == tmp / "train");
  fs::create_directories(tmp / "train");
  CHECK(fresh_run_dir(tmp.path(), "train") == tmp / "train-2");
  fs::create_directories(tmp / "train-2");
  CHECK(fresh_run_dir(tmp.path(), "train") == tmp / "train-3");
}

TEST_CASE("train, probe, export and report end to end") {
  TempDir tmp("cli_e2e");
  {
    std::ofstream cfg(tmp / "tiny.cfg");
    cfg << kTinyConfig;
  }
  const std::string cfg = (tmp / "tiny.cfg").string();
  const std::string root = (tmp / "runs").string();

  const auto train = run({"train", "--run-root", root, "--config", cfg, "--seed", "3", "--alpha", "0.5"});
  REQUIRE(train.code == kExitOk);
  const fs::path run_dir = only_child(tmp / "runs");
  CHECK(run_dir.filename().string().rfind("train-seed3-", 0) == 0);
  const auto manifest = nlohmann::json::parse(slurp(run_dir / "run_manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["tool_version"] == kToolVersion);
  CHECK(manifest["run_id"] == run_dir.filename().string());
  for (const auto& [kind, list] : manifest["artifacts"].items())
    for (const auto& rel : list) CHECK(fs::exists(run_dir / rel.get<std::string>()));
  const std::string snapshot = slurp(run_dir / "config.cfg");
  CHECK(snapshot.find("alpha = 0.5") != std::string::npos);
  CHECK(snapshot.find("seed = 3") != std::string::npos);
  CHECK(snapshot.find("[probe]") != std::string::npos);

  // Same settings again land in a sibling directory with identical metrics.
  REQUIRE(run({"train", "--run-root", root, "--config", cfg, "--seed", "3", "--alpha", "0.5"}).code == kExitOk);
  const fs::path twin = fs::path(run_dir.string() + "-2");
  REQUIRE(fs::exists(twin));
  CHECK(slurp(run_dir / "metrics.csv") == slurp(twin / "metrics.csv"));

  const std::string ckpt = (run_dir / "final.ckpt").string();
  const auto probe = run({"probe", "--run-dir", (tmp / "probe").string(), "--checkpoint", ckpt, "--tasks",
                          "object_acc,view_r2"});
  REQUIRE(probe.code == kExitOk);
  CHECK(probe.out.find("object_acc") != std::string::npos);
  CHECK(fs::exists(tmp / "probe" / "results.csv"));
  CHECK(fs::exists(tmp / "probe" / "run_manifest.json"));
  CHECK(slurp(tmp / "probe" / "config.cfg").find("alpha = 0.5") != std::string::npos);

  CHECK(run({"probe", "--run-dir", (tmp / "probe").string(), "--checkpoint", ckpt}).code == kExitConfig);

  const auto exp = run({"export-embeddings", "--run-dir", (tmp / "emb").string(), "--checkpoint", ckpt, "--split",
                        "test"});
  REQUIRE(exp.code == kExitOk);
  const std::string emb = slurp(tmp / "emb" / "embeddings.csv");
  CHECK(std::count(emb.begin(), emb.end(), '\n') == 1 + 2 * 2 * 4);

  const auto rep = run({"report", "--run-dir", (tmp / "report").string(), run_dir.string(), (tmp / "probe").string()});
  REQUIRE(rep.code == kExitOk);
  CHECK(fs::exists(tmp / "report" / "report.txt"));
  CHECK(fs::exists(tmp / "report" / "loss_0.ppm"));
  CHECK(fs::exists(tmp / "report" / "object_acc.ppm"));
}

TEST_CASE("run root comes from the environment") {
  TempDir tmp("cli_env");
  ::setenv(kRunRootEnv, (tmp / "envroot").c_str(), 1);
  const auto r = run({"gen-data", "--set", "data.num_objects=2", "--set", "data.samples_per_cell=1", "--set",
                      "data.test_samples_per_cell=1", "--set", "data.image_size=8"});
  ::unsetenv(kRunRootEnv);
  REQUIRE(r.code == kExitOk);
  const fs::path dir = only_child(tmp / "envroot");
  CHECK(fs::exists(dir / "data" / "manifest.csv"));
  CHECK(fs::exists(dir / "run_manifest.json"));
}
