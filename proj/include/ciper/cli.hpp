#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ciper {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kRunRootEnv = "CIPER_RUN_ROOT";

enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitNonFinite = 4,
};

/// Keys accepted in the [ablation] section.
std::vector<std::string> ablation_config_keys();

/**
 * Entry point behind the `ciper` tool. args excludes the program name.
 * Subcommands: gen-data, train, probe, ablate-alpha, ablate-aug,
 * export-embeddings, report.
 */
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// First directory root/<base>, root/<base>-2, ... that does not exist yet.
std::filesystem::path fresh_run_dir(const std::filesystem::path& root, const std::string& base);

}  // namespace ciper
