#pragma once

/**
 * Batch commands behind the gspo-lab executable.
 *
 * Exit codes: 0 success, 1 acceptance-threshold failure, 2 config or usage
 * error, 3 training divergence. Nothing else is ever returned.
 *
 * Every command that writes files puts them under its output directory,
 * prefixed "<command>_<seed>", and writes manifest_<command>_<seed>.json
 * last. Data files are byte-identical across reruns with the same config;
 * only the manifest carries a timestamp.
 */

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gspo/cli/config.hpp"

namespace gspo::cli {

enum ExitCode : int {
  kExitSuccess = 0,
  kExitThreshold = 1,
  kExitConfig = 2,
  kExitDiverged = 3,
};

inline constexpr const char* kToolVersion = "0.1.0";

struct CommandContext {
  KeyValueConfig config;
  std::string config_path;  // empty when no file was given
  std::filesystem::path out_dir = "gspo-out";
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

int cmd_equivalence(const CommandContext& ctx);
int cmd_variance(const CommandContext& ctx);
int cmd_train(const CommandContext& ctx);
int cmd_clip_bounds(const CommandContext& ctx);
/// Scans run_dir (recursively) for manifests and writes one series CSV per manifest plus a summary.
int cmd_report(const CommandContext& ctx, const std::filesystem::path& run_dir);

/// Full command-line entry point: argv[0] is the program name. Reads the SEED environment variable.
int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace gspo::cli
