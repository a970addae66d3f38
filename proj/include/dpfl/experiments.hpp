#pragma once

// Scripted synthetic studies. Each experiment is a config struct with a
// bind() that doubles as its INI schema, a pure compute function, and a
// writer that emits CSVs into one run directory next to a manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpfl/attacks.hpp"
#include "dpfl/config.hpp"
#include "dpfl/datagen.hpp"
#include "dpfl/dp_optimizer.hpp"
#include "dpfl/network.hpp"
#include "dpfl/theory.hpp"

namespace dpfl {

/// Runs task(0..count-1) on up to `jobs` threads. Tasks must write only to
/// their own slot; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& task);

/// Seed roles. Seeds are derived from (base seed, experiment, role, replicate)
/// and deliberately not from grid coordinates, so every grid point of one
/// replicate sees the same data, initialization and noise directions.
enum class SeedRole : std::int64_t {
  bank = 0, data = 1, init = 2, train = 3, eval = 4, test = 5, pretrain = 6, baseline = 7
};
std::uint64_t role_seed(std::uint64_t base, const std::string& experiment, SeedRole role,
                        std::uint64_t replicate, std::int64_t extra = -1);

extern const char* const kSeedRule;
const char* code_version();

struct SweepGrid {
  std::vector<double> feature_sizes;
  std::vector<double> noise_grid;
  int replicates = 5;
  std::uint64_t base_seed = 0;
  nlohmann::json fixed;

  void validate() const;
};

struct RunManifest {
  std::string experiment;
  Config config;
  std::string seed_rule = kSeedRule;
  std::string code_version = dpfl::code_version();
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;
  std::string created;

  std::string config_id() const { return config.id(); }
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  static RunManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// ---- shared config sections ----

struct DataSettings {
  int dim = 100;
  std::vector<double> norms{4.0, 2.0, 1.5, 0.5};  // (1,maj), (1,min), (2,maj), (2,min)
  double p_class = 2.0 / 3.0;
  double p_majority = 2.0 / 3.0;
  double sigma_p = 0.2;
  std::size_t n = 450;

  void bind(ConfigBinder& b);
  DataSpec spec(std::uint64_t bank_seed) const;
};

struct ModelSettings {
  int neurons = 32;
  /// Negative selects 1/sqrt(3d), the std of a default uniform fan-in init.
  double init_std = -1.0;

  void bind(ConfigBinder& b);
  double resolved_init_std(int dim) const;
};

struct TrainSettings {
  double learning_rate = 5.0;
  int batch_size = 128;
  double clip_norm = 0.1;
  double noise_std = 0.05;
  int epochs = 20;
  Subsampling subsampling = Subsampling::fixed_uniform;
  NoiseScaling noise_scaling = NoiseScaling::per_step;
  bool divide_by_realized = false;

  void bind(ConfigBinder& b, bool with_noise = true);
  /// ceil(n / B) iterations per epoch.
  int iterations(std::size_t n) const;
  DPConfig dp(std::size_t n, double noise, std::uint64_t seed) const;
};

struct AttackSettings {
  PerturbationNorm norm = PerturbationNorm::linf;
  double radius = 0.02;
  int steps = 20;
  double step_size = 0.0;
  int n_mc = 500;

  void bind(ConfigBinder& b);
  AttackConfig attack() const;
};

// ---- disparate impact and robustness ----

struct DisparateConfig {
  DataSettings data;
  ModelSettings model;
  TrainSettings train;
  AttackSettings attack;
  std::vector<double> noise_grid{0.0, 0.025, 0.05, 0.075, 0.1};
  int replicates = 5;
  std::uint64_t seed = 2024;

  void bind(ConfigBinder& b);
  void validate() const;
};

struct DisparateRun {
  std::size_t sigma_index = 0;
  int replicate = 0;
  std::array<AdversarialEstimate, 4> cells{};
  std::array<double, 4> init_loss{};
  double max_clipped_norm = 0.0;
};

struct DisparateResult {
  std::vector<double> noise_grid;
  std::vector<DisparateRun> runs;  // sigma-major, then replicate
  std::vector<GroupReport> reports;

  /// Mean and standard error over replicates of one metric.
  std::pair<double, double> summary(std::size_t sigma_index, Cell cell,
                                    double AdversarialEstimate::*metric) const;
};

DisparateResult disparate_impact_run(const DisparateConfig& cfg, int jobs = 1);
std::vector<std::string> write_outputs(const DisparateResult& r, const std::filesystem::path& dir,
                                       const std::string& manifest_ref);

// ---- phase transition ----

struct PhaseConfig {
  std::vector<double> feature_sizes{0, 3, 6, 9, 12, 15, 18, 21};
  std::vector<double> noise_grid{0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4};
  int dim = 400;
  double sigma_p = 0.02;
  std::size_t per_class = 100;
  std::size_t test_per_class = 250;
  ModelSettings model;
  TrainSettings train{0.5, 64, 2.0, 0.0, 5};
  int replicates = 5;
  std::uint64_t seed = 2024;

  void bind(ConfigBinder& b);
  SweepGrid grid() const;
};

struct PhaseResult {
  SweepGrid grid;
  Eigen::MatrixXd accuracy;  // rows: feature size, cols: sigma_n
  Eigen::MatrixXd stderr_accuracy;
};

PhaseResult phase_sweep(const PhaseConfig& cfg, int jobs = 1);
std::vector<std::string> write_outputs(const PhaseResult& r, const std::filesystem::path& dir,
                                       const std::string& manifest_ref);

// ---- pretrain / private fine-tune under feature rotation ----

enum class PretrainMode { sgd, construct };
std::string to_string(PretrainMode m);
PretrainMode parse_pretrain_mode(const std::string& text);

struct FinetuneConfig {
  std::vector<double> thetas_deg{0.0, 22.5, 45.0, 67.5};
  int dim = 100;
  double feature_norm = 1.0;
  double sigma_p = 0.5;
  PretrainMode mode = PretrainMode::sgd;
  double c1 = 1.0;  // construct mode and the closed-form L~
  double c3 = 1.0;
  double pretrain_learning_rate = 0.5;
  int pretrain_epochs = 25;
  int pretrain_batch = 64;
  std::size_t per_class = 100;
  std::size_t test_per_class = 500;
  ModelSettings model;
  TrainSettings train{0.5, 64, 1.0, 0.05, 5};
  int replicates = 5;
  std::uint64_t seed = 2024;

  void bind(ConfigBinder& b);
  void validate() const;
};

struct FinetuneRun {
  std::size_t theta_index = 0;
  int replicate = 0;
  double init_loss = 0.0;
  LossEstimate result;
};

struct FinetuneResult {
  std::vector<double> thetas_deg;
  std::vector<double> L_tilde;
  std::vector<FinetuneBound> bounds;
  std::vector<FinetuneRun> runs;  // theta-major, then replicate

  std::pair<double, double> mean_accuracy(std::size_t theta_index) const;
  std::pair<double, double> mean_loss(std::size_t theta_index) const;
};

FinetuneResult pretrain_finetune_run(const FinetuneConfig& cfg, int jobs = 1);
std::vector<std::string> write_outputs(const FinetuneResult& r, const std::filesystem::path& dir,
                                       const std::string& manifest_ref);

// ---- stage-wise freezing ----

enum class FreezeGranularity { unstructured, neuron };
std::string to_string(FreezeGranularity g);
FreezeGranularity parse_granularity(const std::string& text);

/// Freezes the lowest-importance unfrozen structures (|w| per coordinate, or
/// row norm per neuron) until floor(percent/100 * total) structures are
/// frozen. Ties go to the lower storage index. Returns how many were added.
std::size_t freeze_lowest(ModelParams& params, double percent, FreezeGranularity granularity);

/// before_step hook that calls freeze_lowest at fixed iterations.
class StageFreezer {
 public:
  StageFreezer(std::vector<int> iterations, double percent, FreezeGranularity granularity);
  void operator()(int iteration, ModelParams& params) const;

 private:
  std::vector<int> iterations_;
  double percent_;
  FreezeGranularity granularity_;
};

struct FreezeConfig {
  DataSettings data;
  ModelSettings model;
  /// Negative noise_std means: calibrate from (epsilon, alpha).
  TrainSettings train{5.0, 128, 0.05, -1.0, 10};
  std::vector<int> stages{1, 2, 3};  // epochs; freezing happens before the epoch's first step
  double percent = 77.0;
  FreezeGranularity granularity = FreezeGranularity::unstructured;
  double epsilon = 1.0;
  double alpha = 1e-5;
  std::size_t test_n = 2000;
  int replicates = 5;
  std::uint64_t seed = 2024;

  void bind(ConfigBinder& b);
  void validate() const;
  double noise_std() const;
  std::vector<int> stage_iterations() const;
};

struct FreezeRun {
  int replicate = 0;
  double accuracy_without = 0.0;
  double accuracy_with = 0.0;
  double frozen_fraction = 0.0;
  bool identical = false;  // final weights bitwise equal
  bool frozen_constant = true;  // frozen coordinates never moved after freezing
  std::vector<std::pair<int, double>> trace;  // (iteration, frozen fraction)
};

struct FreezeResult {
  double noise_std = 0.0;
  std::vector<FreezeRun> runs;
};

FreezeResult freezing_run(const FreezeConfig& cfg, int jobs = 1);
std::vector<std::string> write_outputs(const FreezeResult& r, const std::filesystem::path& dir,
                                       const std::string& manifest_ref);

// ---- single operations exposed by the CLI ----

struct GenDataConfig {
  DataSettings data;
  std::uint64_t seed = 2024;
  void bind(ConfigBinder& b);
};

struct TrainRunConfig {
  DataSettings data;
  std::string data_path;  // optional dataset dump; generated from [data] when empty
  ModelSettings model;
  TrainSettings train;
  int n_mc = 1000;
  std::uint64_t seed = 2024;
  void bind(ConfigBinder& b);
};

struct AttackRunConfig {
  DataSettings data;
  AttackSettings attack;
  std::string checkpoint;
  std::uint64_t seed = 2024;
  void bind(ConfigBinder& b);
};

struct BoundsConfig {
  DataSettings data;
  ModelSettings model;
  TrainSettings train;
  AttackSettings attack;
  std::vector<double> noise_grid;  // empty: only train.noise_std
  int n_mc = 2000;
  std::uint64_t seed = 2024;
  void bind(ConfigBinder& b);
};

// ---- run directories ----

struct RunOptions {
  std::filesystem::path out_root = "runs";
  int jobs = 1;
  bool quiet = false;
  std::optional<std::uint64_t> seed;
  /// Off when re-running a manifest, whose seeds are already resolved.
  bool use_env_seed = true;
};

struct RunRecord {
  std::filesystem::path dir;
  RunManifest manifest;
};

/// Names accepted by run_experiment, in CLI order.
const std::vector<std::string>& experiment_names();

/// Parses `config` for `experiment`, resolves seeds, runs it and writes
/// <out>/<experiment>/<timestamp>/{manifest.json, config.ini, outputs}.
RunRecord run_experiment(const std::string& experiment, const Config& config,
                         const RunOptions& options);

/// Re-executes a manifest into a fresh run directory.
RunRecord rerun_manifest(const std::filesystem::path& manifest_path, const RunOptions& options);

/// The resolved config (defaults filled, seeds resolved) for `experiment`.
Config resolve_config(const std::string& experiment, const Config& config,
                      const RunOptions& options);

}  // namespace dpfl
