#include <doctest.h>

#include <atomic>
#include <fstream>
#include <sstream>

#include "dpfl/experiments.hpp"
#include "support.hpp"

using namespace dpfl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

DisparateConfig tiny_disparate() {
  DisparateConfig c;
  c.data.dim = 24;
  c.data.n = 120;
  c.model.neurons = 6;
  c.train.batch_size = 40;
  c.train.epochs = 2;
  c.attack.n_mc = 40;
  c.attack.steps = 5;
  c.noise_grid = {0.0, 0.1};
  c.replicates = 2;
  return c;
}

const char* kTinyFreeze =
    "[data]\ndim = 24\nn = 120\n[model]\nneurons = 4\n[train]\nbatch_size = 40\nepochs = 4\n"
    "[freeze]\ntest_n = 100\nstages = 1, 2\n[run]\nreplicates = 2\n";

}  // namespace

TEST_CASE("parallel_for visits every index once and rethrows") {
  for (int jobs : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 2,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("role seeds separate roles and replicates but not grid points") {
  const auto a = role_seed(1, "disparate", SeedRole::data, 0);
  CHECK(a == role_seed(1, "disparate", SeedRole::data, 0));
  CHECK(a != role_seed(1, "disparate", SeedRole::init, 0));
  CHECK(a != role_seed(1, "disparate", SeedRole::data, 1));
  CHECK(a != role_seed(1, "phase-sweep", SeedRole::data, 0));
  CHECK(a != role_seed(1, "disparate", SeedRole::data, 0, 3));
}

TEST_CASE("freeze_lowest by magnitude") {
  ModelParams p(1, 5);
  p.weights << 0.5, -0.1, 0.3, 0.0, 2.0, -0.05, 0.4, -0.7, 0.1, 0.2;
  SUBCASE("unstructured freezes the smallest magnitudes with ties to lower index") {
    CHECK(freeze_lowest(p, 40.0, FreezeGranularity::unstructured) == 4);
    CHECK(p.frozen_count() == 4);
    CHECK(p.frozen(0, 3));  // 0.0
    CHECK(p.frozen(1, 0));  // -0.05
    CHECK(p.frozen(0, 1));  // -0.1 ties 0.1, lower storage index wins
    // Again at the same percent adds nothing.
    CHECK(freeze_lowest(p, 40.0, FreezeGranularity::unstructured) == 0);
  }
  SUBCASE("neuron granularity freezes whole rows") {
    CHECK(freeze_lowest(p, 50.0, FreezeGranularity::neuron) == 1);
    CHECK(p.frozen.row(1).all());
    CHECK_FALSE(p.frozen.row(0).any());
  }
  SUBCASE("zero percent is a no-op and 100 is rejected") {
    CHECK(freeze_lowest(p, 0.0, FreezeGranularity::unstructured) == 0);
    CHECK_THROWS_AS(freeze_lowest(p, 100.0, FreezeGranularity::unstructured), ConfigError);
  }
}

TEST_CASE("stage freezer fires only at its iterations") {
  ModelParams p = init_params({2, 10, 1.0, 3});
  const StageFreezer f({3}, 50.0, FreezeGranularity::unstructured);
  f(1, p);
  CHECK(p.frozen_count() == 0);
  f(3, p);
  CHECK(p.frozen_count() == 20);
}

TEST_CASE("freeze stage epochs map to iterations") {
  FreezeConfig c;
  c.data.n = 450;
  c.train.batch_size = 128;
  c.stages = {1, 2, 3};
  CHECK(c.stage_iterations() == std::vector<int>{1, 5, 9});
  c.train.noise_std = -1.0;
  CHECK(c.noise_std() == doctest::Approx(calibrate_sigma(1.0, 1e-5, 40, 128, 0.05)));
}

TEST_CASE("disparate run is deterministic and consistent") {
  const DisparateConfig c = tiny_disparate();
  const DisparateResult a = disparate_impact_run(c, 1);
  const DisparateResult b = disparate_impact_run(c, 3);
  REQUIRE(a.runs.size() == 4);
  REQUIRE(a.reports.size() == 2);
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      CHECK(a.runs[i].cells[k].loss == b.runs[i].cells[k].loss);
      CHECK(a.runs[i].cells[k].loss >= a.runs[i].cells[k].clean_loss);
    }
    CHECK(a.runs[i].max_clipped_norm <= c.train.clip_norm + 1e-12);
  }
  const auto [mean, se] = a.summary(1, Cell{Label::one, Group::majority}, &AdversarialEstimate::clean_loss);
  CHECK(mean > 0.0);
  CHECK(se >= 0.0);
}

TEST_CASE("disparate config validation") {
  DisparateConfig c = tiny_disparate();
  c.noise_grid = {0.1, 0.05};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_disparate();
  c.replicates = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("phase sweep shape and chance column") {
  PhaseConfig c;
  c.feature_sizes = {0, 12};
  c.noise_grid = {0, 2};
  c.dim = 64;
  c.per_class = 30;
  c.test_per_class = 60;
  c.model.neurons = 4;
  c.train.batch_size = 20;
  c.replicates = 2;
  const PhaseResult r = phase_sweep(c, 2);
  CHECK(r.accuracy.rows() == 2);
  CHECK(r.accuracy.cols() == 2);
  CHECK(std::abs(r.accuracy(0, 0) - 0.5) < 0.15);
  CHECK(r.accuracy(1, 0) > 0.9);
}

TEST_CASE("finetune run fills the closed form and the bounds") {
  FinetuneConfig c;
  c.dim = 30;
  c.per_class = 30;
  c.test_per_class = 50;
  c.pretrain_epochs = 3;
  c.model.neurons = 4;
  c.train.batch_size = 20;
  c.train.epochs = 2;
  c.pretrain_batch = 20;
  c.replicates = 2;
  for (PretrainMode mode : {PretrainMode::sgd, PretrainMode::construct}) {
    c.mode = mode;
    const FinetuneResult r = pretrain_finetune_run(c, 1);
    REQUIRE(r.L_tilde.size() == 4);
    for (std::size_t i = 1; i < 4; ++i) CHECK(r.L_tilde[i] > r.L_tilde[i - 1]);
    CHECK(r.runs.size() == 8);
  }
}

TEST_CASE("freezing with v = 0 leaves paired runs identical") {
  Config cfg = Config::parse_ini(kTinyFreeze);
  cfg.set("freeze.percent", "0");
  const FreezeResult r = freezing_run(read_config<FreezeConfig>(cfg), 1);
  for (const FreezeRun& run : r.runs) {
    CHECK(run.identical);
    CHECK(run.accuracy_with == run.accuracy_without);
    CHECK(run.frozen_fraction == 0.0);
  }
}

TEST_CASE("freezing keeps frozen weights constant and reaches the target fraction") {
  const FreezeResult r = freezing_run(read_config<FreezeConfig>(Config::parse_ini(kTinyFreeze)), 2);
  for (const FreezeRun& run : r.runs) {
    CHECK(run.frozen_constant);
    CHECK(run.frozen_fraction == doctest::Approx(0.77).epsilon(0.01));
    CHECK_FALSE(run.identical);
    REQUIRE_FALSE(run.trace.empty());
    CHECK(run.trace.front().first == 1);
  }
}

TEST_CASE("run directories, manifests and bitwise reruns") {
  const fs::path root = dpfl::testing::scratch_dir("runs");
  RunOptions options;
  options.out_root = root;
  options.quiet = true;
  options.seed = 5;
  const RunRecord first = run_experiment("freeze", Config::parse_ini(kTinyFreeze), options);
  CHECK(fs::exists(first.dir / "manifest.json"));
  CHECK(fs::exists(first.dir / "config.ini"));
  CHECK(first.manifest.config.find("run.seed") == "5");
  CHECK(first.dir.parent_path() == root / "freeze");

  const RunRecord second = rerun_manifest(first.dir / "manifest.json", options);
  CHECK(second.dir != first.dir);
  for (const std::string& name : first.manifest.outputs) {
    CHECK_MESSAGE(slurp(first.dir / name) == slurp(second.dir / name), name);
  }
}

TEST_CASE("config errors leave no run directory behind") {
  const fs::path root = dpfl::testing::scratch_dir("runs_bad");
  RunOptions options;
  options.out_root = root;
  options.quiet = true;
  Config bad = Config::parse_ini(kTinyFreeze);
  bad.set("freeze.percent", "120");
  CHECK_THROWS_AS(run_experiment("freeze", bad, options), ConfigError);
  CHECK_FALSE(fs::exists(root / "freeze"));
  CHECK_THROWS_AS(run_experiment("nope", Config{}, options), ConfigError);
}

TEST_CASE("single operations chain through files") {
  const fs::path root = dpfl::testing::scratch_dir("ops");
  RunOptions options;
  options.out_root = root;
  options.quiet = true;
  const RunRecord gen = run_experiment(
      "gen-data", Config::parse_ini("[data]\ndim = 20\nn = 60\n[run]\nseed = 3\n"), options);
  CHECK(fs::exists(gen.dir / "dataset.bin"));

  Config train_cfg = Config::parse_ini(
      "[data]\ndim = 20\nn = 60\n[model]\nneurons = 4\n[train]\nbatch_size = 20\nepochs = 2\n"
      "[run]\nseed = 3\nn_mc = 30\n");
  train_cfg.set("data.path", (gen.dir / "dataset.bin").string());
  const RunRecord trained = run_experiment("train", train_cfg, options);
  CHECK(fs::exists(trained.dir / "checkpoint.bin"));
  CHECK(read_checkpoint(trained.dir / "checkpoint.bin").neurons() == 4);

  Config attack_cfg = Config::parse_ini("[data]\ndim = 20\n[attack]\nn_mc = 20\n[run]\nseed = 3\n");
  attack_cfg.set("attack.checkpoint", (trained.dir / "checkpoint.bin").string());
  const RunRecord attacked = run_experiment("attack", attack_cfg, options);
  const CsvTable t = read_csv(attacked.dir / "attack.csv");
  CHECK(t.rows.size() == 4);

  Config bounds_cfg = Config::parse_ini("[bounds]\nnoise_grid = 0, 0.05, 0.1\nn_mc = 20\n");
  const RunRecord bounds = run_experiment("bounds", bounds_cfg, options);
  CHECK(read_csv(bounds.dir / "bounds.csv").rows.size() == 12);
  CHECK(fs::exists(bounds.dir / "bounds.json"));
}
