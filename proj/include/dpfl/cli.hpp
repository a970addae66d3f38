#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dpfl {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2 };

struct CliConfig {
  std::string subcommand;
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path out_dir = "runs";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool quiet = false;
  bool print_config = false;
};

/// One line of the `report` summary: a run directory and its headline numbers.
struct RunSummary {
  std::string experiment;
  std::filesystem::path dir;
  std::string config_id;
  double wall_seconds = 0.0;
  std::size_t csv_files = 0;
  std::size_t csv_rows = 0;
  std::string headline;
};

/// Finds every manifest.json under `root`. Throws ConfigError when there is none.
std::vector<RunSummary> summarize_runs(const std::filesystem::path& root);

/// Entry point of the dpfl tool. Returns 0 on success, 1 on a config or usage
/// error and 2 on a runtime failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace dpfl
