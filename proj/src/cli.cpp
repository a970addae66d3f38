#include "dpfl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "dpfl/config.hpp"
#include "dpfl/csv.hpp"
#include "dpfl/experiments.hpp"

namespace dpfl {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double cell_value(const CsvTable& t, const std::vector<std::string>& row, const char* column) {
  const int c = t.column(column);
  if (c < 0 || static_cast<std::size_t>(c) >= row.size()) return std::nan("");
  try {
    return std::stod(row[static_cast<std::size_t>(c)]);
  } catch (const std::exception&) {
    return std::nan("");
  }
}

std::string headline_disparate(const fs::path& dir) {
  const CsvTable t = read_csv(dir / "disparate.csv");
  double top = -1.0;
  for (const auto& row : t.rows) top = std::max(top, cell_value(t, row, "sigma_n"));
  std::string out = "clean loss at sigma_n=" + fmt(top) + ":";
  for (const auto& row : t.rows) {
    if (cell_value(t, row, "sigma_n") == top && row[static_cast<std::size_t>(t.column("metric"))] == "clean_loss") {
      out += " (" + row[static_cast<std::size_t>(t.column("class"))] + "," +
             row[static_cast<std::size_t>(t.column("group"))] + ")=" + fmt(cell_value(t, row, "mean"));
    }
  }
  return out;
}

std::string headline_phase(const fs::path& dir) {
  const CsvTable t = read_csv(dir / "phase_long.csv");
  double fmax = -1.0;
  for (const auto& row : t.rows) fmax = std::max(fmax, cell_value(t, row, "feature_size"));
  double at_top = std::nan(""), chance = 0.0;
  int zero_rows = 0;
  for (const auto& row : t.rows) {
    const double f = cell_value(t, row, "feature_size");
    if (f == fmax && cell_value(t, row, "sigma_n") == 0.0) at_top = cell_value(t, row, "accuracy");
    if (f == 0.0) {
      chance += cell_value(t, row, "accuracy");
      ++zero_rows;
    }
  }
  std::string out = "accuracy at (" + fmt(fmax) + ", 0)=" + fmt(at_top);
  if (zero_rows > 0) out += ", mean at size 0=" + fmt(chance / zero_rows);
  return out;
}

std::string headline_finetune(const fs::path& dir) {
  const CsvTable t = read_csv(dir / "finetune.csv");
  std::string out = "accuracy by theta:";
  for (const auto& row : t.rows) {
    out += " " + fmt(cell_value(t, row, "theta_deg")) + "deg=" + fmt(cell_value(t, row, "accuracy"));
  }
  return out;
}

std::string headline_freeze(const fs::path& dir) {
  const CsvTable t = read_csv(dir / "freeze.csv");
  double with = 0.0, without = 0.0;
  for (const auto& row : t.rows) {
    with += cell_value(t, row, "accuracy_with");
    without += cell_value(t, row, "accuracy_without");
  }
  const double n = std::max<double>(1.0, static_cast<double>(t.rows.size()));
  return "mean accuracy with freezing=" + fmt(with / n) + ", without=" + fmt(without / n);
}

std::string headline_train(const fs::path& dir) {
  const CsvTable t = read_csv(dir / "trace.csv");
  if (t.rows.empty()) return "empty trace";
  return "final batch loss=" + fmt(cell_value(t, t.rows.back(), "mean_loss")) + " after " +
         std::to_string(t.rows.size()) + " iterations";
}

std::string headline_attack(const fs::path& dir) {
  const CsvTable t = read_csv(dir / "attack.csv");
  std::string out = "adv loss:";
  for (const auto& row : t.rows) {
    out += " (" + row[0] + "," + row[1] + ")=" + fmt(cell_value(t, row, "adv_loss"));
  }
  return out;
}

std::string headline(const std::string& experiment, const fs::path& dir) {
  try {
    if (experiment == "disparate") return headline_disparate(dir);
    if (experiment == "phase-sweep") return headline_phase(dir);
    if (experiment == "finetune") return headline_finetune(dir);
    if (experiment == "freeze") return headline_freeze(dir);
    if (experiment == "train") return headline_train(dir);
    if (experiment == "attack") return headline_attack(dir);
  } catch (const std::exception& e) {
    return std::string("unreadable: ") + e.what();
  }
  return "";
}

int write_report(const fs::path& root, std::ostream& out, bool quiet) {
  const std::vector<RunSummary> runs = summarize_runs(root);
  const fs::path summary = root / "summary.csv";
  CsvWriter csv(summary, {"experiment", "run", "config_id", "wall_seconds", "csv_files", "csv_rows",
                          "headline"});
  for (const RunSummary& r : runs) {
    const std::string rel = fs::relative(r.dir, root).string();
    csv.row(r.experiment, rel, r.config_id, r.wall_seconds, r.csv_files, r.csv_rows, r.headline);
    if (!quiet) {
      out << r.experiment << "  " << rel << "  [" << r.config_id << "]  " << r.headline << '\n';
    }
  }
  if (!quiet) out << runs.size() << " run(s); summary written to " << summary.string() << '\n';
  return kExitOk;
}

int run_subcommand(const CliConfig& cli, std::ostream& out) {
  if (cli.subcommand == "report") return write_report(cli.out_dir, out, cli.quiet);

  RunOptions options;
  options.out_root = cli.out_dir;
  options.jobs = cli.jobs;
  options.quiet = cli.quiet;
  options.seed = cli.seed;
  Config config;
  if (cli.config_path) {
    if (cli.config_path->extension() == ".json") {
      const RunManifest m = RunManifest::load(*cli.config_path);
      if (m.experiment != cli.subcommand) {
        throw ConfigError("manifest is for '" + m.experiment + "', not '" + cli.subcommand + "'");
      }
      config = m.config;
      options.use_env_seed = false;
    } else {
      config = Config::load(*cli.config_path);
    }
  }
  if (cli.print_config) {
    out << resolve_config(cli.subcommand, config, options).to_ini();
    return kExitOk;
  }
  std::error_code ec;
  fs::create_directories(cli.out_dir, ec);
  if (ec || !fs::is_directory(cli.out_dir)) {
    throw ConfigError("output directory " + cli.out_dir.string() + " is not writable");
  }
  const RunRecord record = run_experiment(cli.subcommand, config, options);
  if (!cli.quiet) out << record.dir.string() << '\n';
  return kExitOk;
}

}  // namespace

std::vector<RunSummary> summarize_runs(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("report: " + root.string() + " is not a directory");
  std::vector<RunSummary> runs;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().filename() != "manifest.json") continue;
    const RunManifest m = RunManifest::load(entry.path());
    RunSummary r;
    r.experiment = m.experiment;
    r.dir = entry.path().parent_path();
    r.config_id = m.config_id();
    r.wall_seconds = m.wall_seconds;
    for (const std::string& name : m.outputs) {
      if (fs::path(name).extension() != ".csv" || !fs::exists(r.dir / name)) continue;
      ++r.csv_files;
      r.csv_rows += read_csv(r.dir / name).rows.size();
    }
    r.headline = headline(m.experiment, r.dir);
    runs.push_back(std::move(r));
  }
  if (runs.empty()) throw ConfigError("report: no run manifests under " + root.string());
  std::sort(runs.begin(), runs.end(), [](const RunSummary& a, const RunSummary& b) {
    return a.dir.string() < b.dir.string();
  });
  return runs;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Differentially private training lab for a two-layer ReLU CNN", "dpfl"};
  app.require_subcommand(1);
  app.fallthrough();

  CliConfig cli;
  std::string config_path;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "INI config, or a manifest.json to re-run");
  app.add_option("--out", cli.out_dir, "Output directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "Seed override (beats DPFL_SEED)");
  app.add_option("--jobs", cli.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("--quiet", cli.quiet, "Suppress progress output");
  app.add_flag("--print-config", cli.print_config, "Print the resolved config and exit");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Generate a dataset dump"},
      {"train", "Single DP-SGD training run with a trace"},
      {"attack", "PGD adversarial metrics for a checkpoint"},
      {"bounds", "Evaluate the theory bounds for a config"},
      {"phase-sweep", "Accuracy over feature size x noise"},
      {"disparate", "Per-group clean and adversarial loss over noise"},
      {"finetune", "Private fine-tuning under feature rotation"},
      {"freeze", "Paired runs with and without stage-wise freezing"},
      {"report", "Summarize the runs under --out"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  cli.subcommand = app.get_subcommands().front()->get_name();
  if (!config_path.empty()) cli.config_path = config_path;
  if (seed_opt->count() > 0) cli.seed = seed;

  try {
    return run_subcommand(cli, out);
  } catch (const ConfigError& e) {
    err << "dpfl " << cli.subcommand << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "dpfl " << cli.subcommand << ": runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace dpfl
