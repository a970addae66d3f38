#include <doctest.h>

#include <fstream>
#include <sstream>

#include "dpfl/cli.hpp"
#include "dpfl/experiments.hpp"
#include "support.hpp"

using namespace dpfl;
namespace fs = std::filesystem;

namespace {

struct Invocation {
  int code = -1;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "dpfl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Invocation r;
  r.code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

fs::path only_run_dir(const fs::path& root, const std::string& experiment) {
  fs::path found;
  for (const auto& e : fs::directory_iterator(root / experiment)) found = e.path();
  return found;
}

const char* kSmallTrain =
    "[data]\ndim = 20\nn = 60\n[model]\nneurons = 4\n[train]\nbatch_size = 20\nepochs = 2\n"
    "[run]\nn_mc = 20\n";

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(invoke({}).code == kExitConfig);
  CHECK(invoke({"fly"}).code == kExitConfig);
  CHECK(invoke({"train", "--jobs", "0"}).code == kExitConfig);
  CHECK(invoke({"train", "--bogus"}).code == kExitConfig);
  CHECK(invoke({"--help"}).code == kExitOk);
}

TEST_CASE("report over an empty directory exits 1 with a message") {
  const fs::path dir = dpfl::testing::scratch_dir("cli_empty");
  const Invocation r = invoke({"report", "--out", dir.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("no run manifests") != std::string::npos);
  CHECK(invoke({"report", "--out", (dir / "missing").string()}).code == kExitConfig);
}

TEST_CASE("bad config values exit 1 and create nothing") {
  const fs::path dir = dpfl::testing::scratch_dir("cli_badcfg");
  const fs::path cfg = write_file(dir / "c.ini", "[train]\nlearning_rate = fast\n");
  const Invocation r = invoke({"train", "--config", cfg.string(), "--out", (dir / "o").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("train.learning_rate") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o" / "train"));
  CHECK(invoke({"train", "--config", (dir / "none.ini").string()}).code == kExitConfig);
}

TEST_CASE("runtime failures exit 2") {
  const fs::path dir = dpfl::testing::scratch_dir("cli_runtime");
  const fs::path cfg =
      write_file(dir / "c.ini", "[attack]\ncheckpoint = " + (dir / "absent.bin").string() + "\n");
  const Invocation r =
      invoke({"attack", "--config", cfg.string(), "--out", (dir / "o").string(), "--quiet"});
  CHECK(r.code == kExitRuntime);
  CHECK(r.err.find("runtime failure") != std::string::npos);
}

TEST_CASE("train with zero learning rate keeps the initial checkpoint") {
  const fs::path dir = dpfl::testing::scratch_dir("cli_eta0");
  Config merged = Config::parse_ini(kSmallTrain);
  merged.set("train.learning_rate", "0");
  const fs::path cfg = write_file(dir / "c.ini", merged.to_ini());
  REQUIRE(invoke({"train", "--config", cfg.string(), "--out", dir.string(), "--quiet"}).code ==
          kExitOk);
  const fs::path run = only_run_dir(dir, "train");
  const ModelParams a = read_checkpoint(run / "initial.bin");
  const ModelParams b = read_checkpoint(run / "checkpoint.bin");
  CHECK((a.weights.array() == b.weights.array()).all());
}

TEST_CASE("printed config round-trips to identical behavior") {
  const fs::path dir = dpfl::testing::scratch_dir("cli_roundtrip");
  const fs::path cfg = write_file(dir / "c.ini", kSmallTrain);
  const Invocation printed = invoke({"train", "--config", cfg.string(), "--print-config", "--seed", "4"});
  REQUIRE(printed.code == kExitOk);
  const fs::path echoed = write_file(dir / "echo.ini", printed.out);
  const Invocation again = invoke({"train", "--config", echoed.string(), "--print-config"});
  CHECK(again.out == printed.out);

  REQUIRE(invoke({"train", "--config", cfg.string(), "--seed", "4", "--out",
                  (dir / "a").string(), "--quiet"}).code == kExitOk);
  REQUIRE(invoke({"train", "--config", echoed.string(), "--out", (dir / "b").string(), "--quiet"})
              .code == kExitOk);
  const fs::path ra = only_run_dir(dir / "a", "train");
  const fs::path rb = only_run_dir(dir / "b", "train");
  for (const char* name : {"trace.csv", "eval.csv", "config.ini"}) {
    std::ifstream fa(ra / name), fb(rb / name);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK_MESSAGE(sa.str() == sb.str(), name);
  }
}

TEST_CASE("manifest reruns must match the subcommand") {
  const fs::path dir = dpfl::testing::scratch_dir("cli_manifest");
  const fs::path cfg = write_file(dir / "c.ini", "[bounds]\nn_mc = 20\n");
  REQUIRE(invoke({"bounds", "--config", cfg.string(), "--out", dir.string(), "--quiet"}).code ==
          kExitOk);
  const fs::path manifest = only_run_dir(dir, "bounds") / "manifest.json";
  CHECK(invoke({"train", "--config", manifest.string(), "--out", dir.string()}).code == kExitConfig);
  CHECK(invoke({"bounds", "--config", manifest.string(), "--out", dir.string(), "--quiet"}).code ==
        kExitOk);
}

TEST_CASE("bounds writes a JSON report and report summarizes runs") {
  const fs::path dir = dpfl::testing::scratch_dir("cli_report");
  const fs::path cfg = write_file(dir / "c.ini", "[bounds]\nn_mc = 20\nnoise_grid = 0.05, 0.1\n");
  REQUIRE(invoke({"bounds", "--config", cfg.string(), "--out", dir.string(), "--quiet"}).code ==
          kExitOk);
  const fs::path run = only_run_dir(dir, "bounds");
  std::ifstream in(run / "bounds.json");
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j.at("reports").size() == 2);
  CHECK(j.contains("regime_warnings"));

  const Invocation r = invoke({"report", "--out", dir.string()});
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK(read_csv(dir / "summary.csv").rows.size() == 1);
  // Nothing outside the output directory besides the config we wrote.
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    CHECK((name == "bounds" || name == "summary.csv" || name == "c.ini"));
  }
}
