#include "dpfl/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "dpfl/csv.hpp"
#include "dpfl/stats.hpp"

#ifndef DPFL_VERSION
#define DPFL_VERSION "unknown"
#endif

namespace dpfl {

const char* const kSeedRule =
    "seed(role, replicate) = derive_seed(run.seed, experiment, [role(, cell)], replicate); "
    "FNV-1a 64 over little-endian bytes, splitmix64 finalizer; roles: bank=0 data=1 init=2 "
    "train=3 eval=4 test=5 pretrain=6 baseline=7; train() uses stream_seed(seed, 0) for "
    "batches and stream_seed(seed, 1) for noise";

const char* code_version() { return "dpfl " DPFL_VERSION; }

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& task) {
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) break;
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::uint64_t role_seed(std::uint64_t base, const std::string& experiment, SeedRole role,
                        std::uint64_t replicate, std::int64_t extra) {
  const std::int64_t coords[2] = {static_cast<std::int64_t>(role), extra};
  return derive_seed(base, experiment, std::span<const std::int64_t>(coords, extra < 0 ? 1 : 2),
                     replicate);
}

namespace {

void require_increasing(const std::vector<double>& v, const std::string& name) {
  if (v.empty()) throw ConfigError(name + " must not be empty");
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) throw ConfigError(name + " must be strictly increasing");
  }
}

std::pair<double, double> mean_se(const std::vector<double>& xs) {
  RunningStats s;
  for (double x : xs) s.add(x);
  return {s.mean(), s.standard_error()};
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
         std::memcmp(a.weights.data(), b.weights.data(),
                     sizeof(double) * static_cast<std::size_t>(a.weights.size())) == 0 &&
         (a.frozen == b.frozen).all();
}

double max_clipped(const TrainTrace& trace) {
  double m = 0.0;
  for (const StepRecord& s : trace.steps) m = std::max(m, s.max_clipped_norm);
  return m;
}

}  // namespace

void SweepGrid::validate() const {
  require_increasing(feature_sizes, "phase.feature_sizes");
  require_increasing(noise_grid, "phase.noise_grid");
  if (feature_sizes.front() < 0.0) throw ConfigError("phase.feature_sizes must be nonnegative");
  if (noise_grid.front() < 0.0) throw ConfigError("phase.noise_grid must be nonnegative");
  if (replicates < 1) throw ConfigError("run.replicates must be at least 1");
}

nlohmann::json RunManifest::to_json() const {
  return {{"experiment", experiment},   {"config", config.to_json()},
          {"config_id", config_id()},   {"seed_rule", seed_rule},
          {"code_version", code_version}, {"outputs", outputs},
          {"wall_seconds", wall_seconds}, {"created", created}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.experiment = j.at("experiment").get<std::string>();
    m.config = Config::from_json(j.at("config"));
    m.seed_rule = j.value("seed_rule", std::string(kSeedRule));
    m.code_version = j.value("code_version", std::string());
    m.outputs = j.value("outputs", std::vector<std::string>{});
    m.wall_seconds = j.value("wall_seconds", 0.0);
    m.created = j.value("created", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed manifest " + path.string() + ": " + e.what());
  }
}

void RunManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

// ---- shared sections ----

void DataSettings::bind(ConfigBinder& b) {
  b.field("data.dim", dim);
  b.field("data.norms", norms);
  b.field("data.p_class", p_class);
  b.field("data.p_majority", p_majority);
  b.field("data.sigma_p", sigma_p);
  b.field("data.n", n);
}

DataSpec DataSettings::spec(std::uint64_t bank_seed) const {
  if (norms.size() != 4) throw ConfigError("data.norms must list four values");
  if (n < 1) throw ConfigError("data.n must be at least 1");
  DataSpec s{p_class, p_majority, sigma_p,
             make_feature_bank(dim, {norms[0], norms[1], norms[2], norms[3]}, bank_seed)};
  s.validate();
  return s;
}

void ModelSettings::bind(ConfigBinder& b) {
  b.field("model.neurons", neurons);
  b.field("model.init_std", init_std);
}

double ModelSettings::resolved_init_std(int dim) const {
  return init_std < 0.0 ? 1.0 / std::sqrt(3.0 * dim) : init_std;
}

void TrainSettings::bind(ConfigBinder& b, bool with_noise) {
  b.field("train.learning_rate", learning_rate);
  b.field("train.batch_size", batch_size);
  b.field("train.clip_norm", clip_norm);
  if (with_noise) b.field("train.noise_std", noise_std);
  b.field("train.epochs", epochs);
  b.choice("train.subsampling", subsampling, [](Subsampling s) { return to_string(s); },
           parse_subsampling);
  b.choice("train.noise_scaling", noise_scaling, [](NoiseScaling s) { return to_string(s); },
           parse_noise_scaling);
  b.field("train.divide_by_realized", divide_by_realized);
}

int TrainSettings::iterations(std::size_t n) const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  const std::size_t b = static_cast<std::size_t>(batch_size);
  return epochs * static_cast<int>((n + b - 1) / b);
}

DPConfig TrainSettings::dp(std::size_t n, double noise, std::uint64_t seed) const {
  DPConfig cfg;
  cfg.learning_rate = learning_rate;
  cfg.batch_size = batch_size;
  cfg.clip_norm = clip_norm;
  cfg.noise_std = noise;
  cfg.iterations = iterations(n);
  cfg.subsampling = subsampling;
  cfg.seed = seed;
  cfg.divide_by_realized = divide_by_realized;
  cfg.noise_scaling = noise_scaling;
  cfg.validate(n);
  return cfg;
}

void AttackSettings::bind(ConfigBinder& b) {
  b.choice("attack.norm", norm, [](PerturbationNorm p) { return to_string(p); }, parse_norm);
  b.field("attack.radius", radius);
  b.field("attack.steps", steps);
  b.field("attack.step_size", step_size);
  b.field("attack.n_mc", n_mc);
}

AttackConfig AttackSettings::attack() const {
  AttackConfig a;
  a.norm = norm;
  a.radius = radius;
  a.steps = steps;
  a.step_size = step_size;
  a.validate();
  if (n_mc < 1) throw ConfigError("attack.n_mc must be at least 1");
  return a;
}

// ---- disparate impact ----

void DisparateConfig::bind(ConfigBinder& b) {
  data.bind(b);
  model.bind(b);
  train.bind(b, false);
  attack.bind(b);
  b.field("run.noise_grid", noise_grid);
  b.field("run.replicates", replicates);
  b.field("run.seed", seed);
}

void DisparateConfig::validate() const {
  require_increasing(noise_grid, "run.noise_grid");
  if (noise_grid.front() < 0.0) throw ConfigError("run.noise_grid must be nonnegative");
  if (replicates < 1) throw ConfigError("run.replicates must be at least 1");
  attack.attack();
}

std::pair<double, double> DisparateResult::summary(std::size_t sigma_index, Cell cell,
                                                   double AdversarialEstimate::*metric) const {
  std::vector<double> xs;
  for (const DisparateRun& r : runs) {
    if (r.sigma_index == sigma_index) xs.push_back(r.cells[cell.index()].*metric);
  }
  return mean_se(xs);
}

DisparateResult disparate_impact_run(const DisparateConfig& cfg, int jobs) {
  cfg.validate();
  const std::string tag = "disparate";
  const std::size_t S = cfg.noise_grid.size();
  const auto R = static_cast<std::size_t>(cfg.replicates);
  const AttackConfig attack = cfg.attack.attack();
  const double init_std = cfg.model.resolved_init_std(cfg.data.dim);

  DisparateResult result;
  result.noise_grid = cfg.noise_grid;
  result.runs.resize(S * R);
  parallel_for(S * R, jobs, [&](std::size_t k) {
    const std::size_t s = k / R;
    const std::uint64_t rep = k % R;
    const DataSpec spec = cfg.data.spec(role_seed(cfg.seed, tag, SeedRole::bank, rep));
    const Dataset data =
        generate_dataset(spec, cfg.data.n, role_seed(cfg.seed, tag, SeedRole::data, rep));
    const ModelParams w0 = init_params(
        {cfg.model.neurons, cfg.data.dim, init_std, role_seed(cfg.seed, tag, SeedRole::init, rep)});
    const DPConfig dp =
        cfg.train.dp(cfg.data.n, cfg.noise_grid[s], role_seed(cfg.seed, tag, SeedRole::train, rep));
    TrainTrace trace;
    const ModelParams w = train(data, w0, dp, &trace);

    DisparateRun& run = result.runs[k];
    run.sigma_index = s;
    run.replicate = static_cast<int>(rep);
    run.max_clipped_norm = max_clipped(trace);
    for (Cell c : kAllCells) {
      const auto i = static_cast<std::size_t>(c.index());
      Rng eval(role_seed(cfg.seed, tag, SeedRole::eval, rep, c.index()));
      run.cells[i] = adv_loss(w, spec, c, attack, cfg.attack.n_mc, eval);
      Rng base(role_seed(cfg.seed, tag, SeedRole::baseline, rep, c.index()));
      run.init_loss[i] = mc_test_loss(w0, spec, c, cfg.attack.n_mc, base).loss;
    }
  });

  const DataSpec spec0 = cfg.data.spec(role_seed(cfg.seed, tag, SeedRole::bank, 0));
  for (std::size_t s = 0; s < S; ++s) {
    ReportInputs in;
    in.iterations = cfg.train.iterations(cfg.data.n);
    in.neurons = cfg.model.neurons;
    in.n = cfg.data.n;
    in.init_std = init_std;
    in.attack_radius = cfg.attack.radius;
    in.attack_norm = cfg.attack.norm;
    for (Cell c : kAllCells) {
      std::vector<double> l0;
      for (const DisparateRun& r : result.runs) {
        if (r.sigma_index == s) l0.push_back(r.init_loss[c.index()]);
      }
      in.init_loss[c.index()] = mean_se(l0).first;
    }
    GroupReport report = build_report(spec0, cfg.train.dp(cfg.data.n, cfg.noise_grid[s], 0), in);
    for (Cell c : kAllCells) {
      CellReport& cr = report.cells[c.index()];
      const auto [loss, loss_se] = result.summary(s, c, &AdversarialEstimate::clean_loss);
      const auto [acc, acc_se] = result.summary(s, c, &AdversarialEstimate::clean_accuracy);
      const auto [adv, adv_se] = result.summary(s, c, &AdversarialEstimate::loss);
      const auto [adv_acc, adv_acc_se] = result.summary(s, c, &AdversarialEstimate::accuracy);
      cr.clean = LossEstimate{loss, acc, loss_se};
      AdversarialEstimate a;
      a.loss = adv;
      a.stderr_loss = adv_se;
      a.accuracy = adv_acc;
      a.clean_loss = loss;
      a.clean_stderr = loss_se;
      a.clean_accuracy = acc;
      cr.adversarial = a;
    }
    result.reports.push_back(std::move(report));
  }
  return result;
}

std::vector<std::string> write_outputs(const DisparateResult& r, const std::filesystem::path& dir,
                                       const std::string& ref) {
  {
    CsvWriter csv(dir / "disparate.csv",
                  {"sigma_n", "class", "group", "metric", "mean", "stderr", "manifest"});
    for (std::size_t s = 0; s < r.noise_grid.size(); ++s) {
      for (Cell c : kAllCells) {
        const std::string cls = to_string(c.label);
        const std::string grp = to_string(c.group);
        auto emit = [&](const char* metric, std::pair<double, double> v) {
          csv.row(r.noise_grid[s], cls, grp, std::string(metric), v.first, v.second, ref);
        };
        emit("clean_loss", r.summary(s, c, &AdversarialEstimate::clean_loss));
        emit("clean_accuracy", r.summary(s, c, &AdversarialEstimate::clean_accuracy));
        emit("adv_loss", r.summary(s, c, &AdversarialEstimate::loss));
        emit("adv_accuracy", r.summary(s, c, &AdversarialEstimate::accuracy));
        std::vector<double> gaps;
        for (const DisparateRun& run : r.runs) {
          if (run.sigma_index != s) continue;
          const AdversarialEstimate& e = run.cells[c.index()];
          gaps.push_back(e.loss - e.clean_loss);
        }
        emit("adv_gap", mean_se(gaps));
        const CellReport& cr = r.reports[s].cells[c.index()];
        emit("upper_bound", {cr.upper.total(), 0.0});
        emit("lower_bound", {cr.lower.total(), 0.0});
        emit("adv_bound", {cr.adversarial_bound ? cr.adversarial_bound->total() : 0.0, 0.0});
      }
    }
  }
  {
    CsvWriter csv(dir / "disparate_runs.csv",
                  {"sigma_n", "replicate", "class", "group", "clean_loss", "adv_loss",
                   "clean_accuracy", "adv_accuracy", "init_loss", "max_clipped_norm", "manifest"});
    for (const DisparateRun& run : r.runs) {
      for (Cell c : kAllCells) {
        const AdversarialEstimate& e = run.cells[c.index()];
        csv.row(r.noise_grid[run.sigma_index], run.replicate, to_string(c.label),
                to_string(c.group), e.clean_loss, e.loss, e.clean_accuracy, e.accuracy,
                run.init_loss[c.index()], run.max_clipped_norm, ref);
      }
    }
  }
  {
    CsvWriter csv(dir / "bounds.csv", report_csv_header());
    nlohmann::json all = nlohmann::json::array();
    for (const GroupReport& g : r.reports) {
      append_report_rows(csv, g, ref);
      all.push_back(to_json(g));
    }
    std::ofstream out(dir / "bounds.json");
    out << nlohmann::json{{"manifest", ref}, {"reports", all}}.dump(2) << '\n';
  }
  return {"disparate.csv", "disparate_runs.csv", "bounds.csv", "bounds.json"};
}

// ---- phase transition ----

void PhaseConfig::bind(ConfigBinder& b) {
  b.field("phase.feature_sizes", feature_sizes);
  b.field("phase.noise_grid", noise_grid);
  b.field("phase.dim", dim);
  b.field("phase.sigma_p", sigma_p);
  b.field("phase.per_class", per_class);
  b.field("phase.test_per_class", test_per_class);
  model.bind(b);
  train.bind(b, false);
  b.field("run.replicates", replicates);
  b.field("run.seed", seed);
}

SweepGrid PhaseConfig::grid() const {
  SweepGrid g;
  g.feature_sizes = feature_sizes;
  g.noise_grid = noise_grid;
  g.replicates = replicates;
  g.base_seed = seed;
  g.fixed = write_config(*this).to_json();
  g.validate();
  return g;
}

PhaseResult phase_sweep(const PhaseConfig& cfg, int jobs) {
  const std::string tag = "phase-sweep";
  PhaseResult result;
  result.grid = cfg.grid();
  if (cfg.per_class < 1 || cfg.test_per_class < 1) {
    throw ConfigError("phase.per_class and phase.test_per_class must be at least 1");
  }
  const std::size_t F = cfg.feature_sizes.size();
  const std::size_t S = cfg.noise_grid.size();
  const auto R = static_cast<std::size_t>(cfg.replicates);
  const std::size_t n = 2 * cfg.per_class;
  const double init_std = cfg.model.resolved_init_std(cfg.dim);
  std::vector<double> acc(F * S * R);
  parallel_for(acc.size(), jobs, [&](std::size_t k) {
    const std::size_t f = k / (S * R);
    const std::size_t s = (k / R) % S;
    const std::uint64_t rep = k % R;
    const SimpleBank bank =
        make_simple_banks(cfg.dim, cfg.feature_sizes[f], 0.0,
                          role_seed(cfg.seed, tag, SeedRole::bank, rep)).first;
    const Dataset data = generate_balanced(bank, cfg.sigma_p, cfg.per_class,
                                           role_seed(cfg.seed, tag, SeedRole::data, rep));
    const Dataset test = generate_balanced(bank, cfg.sigma_p, cfg.test_per_class,
                                           role_seed(cfg.seed, tag, SeedRole::test, rep));
    const ModelParams w0 = init_params(
        {cfg.model.neurons, cfg.dim, init_std, role_seed(cfg.seed, tag, SeedRole::init, rep)});
    const DPConfig dp =
        cfg.train.dp(n, cfg.noise_grid[s], role_seed(cfg.seed, tag, SeedRole::train, rep));
    acc[k] = accuracy(train(data, w0, dp), test);
  });

  result.accuracy.resize(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(S));
  result.stderr_accuracy.resizeLike(result.accuracy);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t s = 0; s < S; ++s) {
      RunningStats st;
      for (std::size_t rep = 0; rep < R; ++rep) st.add(acc[(f * S + s) * R + rep]);
      result.accuracy(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(s)) = st.mean();
      result.stderr_accuracy(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(s)) =
          st.standard_error();
    }
  }
  return result;
}

std::vector<std::string> write_outputs(const PhaseResult& r, const std::filesystem::path& dir,
                                       const std::string& ref) {
  const auto& g = r.grid;
  {
    std::vector<std::string> header{"feature_size"};
    for (double s : g.noise_grid) header.push_back("sigma_n=" + format_number(s));
    header.push_back("manifest");
    std::ofstream out(dir / "phase_accuracy.csv");
    if (!out) throw std::runtime_error("cannot write phase_accuracy.csv");
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_field(header[i]);
    out << '\n';
    for (std::size_t f = 0; f < g.feature_sizes.size(); ++f) {
      out << format_number(g.feature_sizes[f]);
      for (std::size_t s = 0; s < g.noise_grid.size(); ++s) {
        out << ',' << format_number(r.accuracy(static_cast<Eigen::Index>(f),
                                               static_cast<Eigen::Index>(s)));
      }
      out << ',' << ref << '\n';
    }
  }
  {
    CsvWriter csv(dir / "phase_long.csv",
                  {"feature_size", "sigma_n", "accuracy", "stderr", "manifest"});
    for (std::size_t f = 0; f < g.feature_sizes.size(); ++f) {
      for (std::size_t s = 0; s < g.noise_grid.size(); ++s) {
        const auto fi = static_cast<Eigen::Index>(f);
        const auto si = static_cast<Eigen::Index>(s);
        csv.row(g.feature_sizes[f], g.noise_grid[s], r.accuracy(fi, si),
                r.stderr_accuracy(fi, si), ref);
      }
    }
  }
  return {"phase_accuracy.csv", "phase_long.csv"};
}

// ---- pretrain / fine-tune ----

std::string to_string(PretrainMode m) { return m == PretrainMode::sgd ? "sgd" : "construct"; }

PretrainMode parse_pretrain_mode(const std::string& text) {
  if (text == "sgd") return PretrainMode::sgd;
  if (text == "construct") return PretrainMode::construct;
  throw ConfigError("unknown pretrain mode '" + text + "' (expected sgd or construct)");
}

void FinetuneConfig::bind(ConfigBinder& b) {
  b.field("finetune.thetas_deg", thetas_deg);
  b.field("finetune.dim", dim);
  b.field("finetune.feature_norm", feature_norm);
  b.field("finetune.sigma_p", sigma_p);
  b.choice("finetune.mode", mode, [](PretrainMode m) { return to_string(m); },
           parse_pretrain_mode);
  b.field("finetune.c1", c1);
  b.field("finetune.c3", c3);
  b.field("finetune.pretrain_learning_rate", pretrain_learning_rate);
  b.field("finetune.pretrain_epochs", pretrain_epochs);
  b.field("finetune.pretrain_batch", pretrain_batch);
  b.field("finetune.per_class", per_class);
  b.field("finetune.test_per_class", test_per_class);
  model.bind(b);
  train.bind(b, true);
  b.field("run.replicates", replicates);
  b.field("run.seed", seed);
}

void FinetuneConfig::validate() const {
  if (thetas_deg.empty()) throw ConfigError("finetune.thetas_deg must not be empty");
  for (double t : thetas_deg) {
    if (!(t >= 0.0 && t <= 90.0)) throw ConfigError("finetune.thetas_deg must lie in [0, 90]");
  }
  if (replicates < 1) throw ConfigError("run.replicates must be at least 1");
  if (per_class < 1 || test_per_class < 1) {
    throw ConfigError("finetune.per_class and finetune.test_per_class must be at least 1");
  }
  if (pretrain_epochs < 1 || pretrain_batch < 1) {
    throw ConfigError("finetune.pretrain_epochs and finetune.pretrain_batch must be at least 1");
  }
}

std::pair<double, double> FinetuneResult::mean_accuracy(std::size_t theta_index) const {
  std::vector<double> xs;
  for (const FinetuneRun& r : runs) {
    if (r.theta_index == theta_index) xs.push_back(r.result.accuracy);
  }
  return mean_se(xs);
}

std::pair<double, double> FinetuneResult::mean_loss(std::size_t theta_index) const {
  std::vector<double> xs;
  for (const FinetuneRun& r : runs) {
    if (r.theta_index == theta_index) xs.push_back(r.result.loss);
  }
  return mean_se(xs);
}

FinetuneResult pretrain_finetune_run(const FinetuneConfig& cfg, int jobs) {
  cfg.validate();
  const std::string tag = "finetune";
  const double deg = std::acos(-1.0) / 180.0;
  const std::size_t A = cfg.thetas_deg.size();
  const auto R = static_cast<std::size_t>(cfg.replicates);
  const std::size_t n = 2 * cfg.per_class;
  const double init_std = cfg.model.resolved_init_std(cfg.dim);
  const int pretrain_iters =
      cfg.pretrain_epochs *
      static_cast<int>((n + static_cast<std::size_t>(cfg.pretrain_batch) - 1) /
                       static_cast<std::size_t>(cfg.pretrain_batch));

  FinetuneResult result;
  result.thetas_deg = cfg.thetas_deg;
  for (double t : cfg.thetas_deg) {
    result.L_tilde.push_back(
        finetune_L_tilde(t * deg, cfg.feature_norm, cfg.feature_norm, cfg.c1, cfg.c3, cfg.sigma_p));
    FinetuneSetting s;
    s.theta = t * deg;
    s.feature_norm = cfg.feature_norm;
    s.c1 = cfg.c1;
    s.c3 = cfg.c3;
    s.sigma_p = cfg.sigma_p;
    s.dim = cfg.dim;
    s.neurons = cfg.model.neurons;
    s.n = n;
    s.iterations = cfg.train.iterations(n);
    s.clip_norm = cfg.train.clip_norm;
    s.noise_std = cfg.train.noise_std;
    result.bounds.push_back(finetune_bound(s));
  }
  result.runs.resize(A * R);
  parallel_for(A * R, jobs, [&](std::size_t k) {
    const std::size_t a = k / R;
    const std::uint64_t rep = k % R;
    const auto [pre, fine] = make_simple_banks(cfg.dim, cfg.feature_norm, cfg.thetas_deg[a] * deg,
                                               role_seed(cfg.seed, tag, SeedRole::bank, rep));
    ModelParams start;
    if (cfg.mode == PretrainMode::sgd) {
      const Dataset pdata = generate_balanced(pre, cfg.sigma_p, cfg.per_class,
                                              role_seed(cfg.seed, tag, SeedRole::pretrain, rep));
      const ModelParams w0 = init_params(
          {cfg.model.neurons, cfg.dim, init_std, role_seed(cfg.seed, tag, SeedRole::init, rep)});
      start = sgd_pretrain(pdata, w0, cfg.pretrain_learning_rate, pretrain_iters,
                           cfg.pretrain_batch, role_seed(cfg.seed, tag, SeedRole::pretrain, rep, 1));
    } else {
      Rng rng(role_seed(cfg.seed, tag, SeedRole::init, rep));
      start = init_pretrained(pre, cfg.c1, cfg.c3, cfg.sigma_p, cfg.model.neurons, rng);
    }
    const Dataset data = generate_balanced(fine, cfg.sigma_p, cfg.per_class,
                                           role_seed(cfg.seed, tag, SeedRole::data, rep));
    const Dataset test = generate_balanced(fine, cfg.sigma_p, cfg.test_per_class,
                                           role_seed(cfg.seed, tag, SeedRole::test, rep));
    const DPConfig dp =
        cfg.train.dp(n, cfg.train.noise_std, role_seed(cfg.seed, tag, SeedRole::train, rep));
    FinetuneRun& run = result.runs[k];
    run.theta_index = a;
    run.replicate = static_cast<int>(rep);
    run.init_loss = evaluate(start, test).loss;
    run.result = evaluate(train(data, start, dp), test);
  });
  return result;
}

std::vector<std::string> write_outputs(const FinetuneResult& r, const std::filesystem::path& dir,
                                       const std::string& ref) {
  {
    CsvWriter csv(dir / "finetune.csv",
                  {"theta_deg", "L_tilde", "bound_total", "loss", "loss_stderr", "accuracy",
                   "accuracy_stderr", "manifest"});
    for (std::size_t a = 0; a < r.thetas_deg.size(); ++a) {
      const auto [loss, loss_se] = r.mean_loss(a);
      const auto [acc, acc_se] = r.mean_accuracy(a);
      csv.row(r.thetas_deg[a], r.L_tilde[a], r.bounds[a].total(), loss, loss_se, acc, acc_se, ref);
    }
  }
  {
    CsvWriter csv(dir / "finetune_runs.csv",
                  {"theta_deg", "replicate", "init_loss", "loss", "accuracy", "manifest"});
    for (const FinetuneRun& run : r.runs) {
      csv.row(r.thetas_deg[run.theta_index], run.replicate, run.init_loss, run.result.loss,
              run.result.accuracy, ref);
    }
  }
  return {"finetune.csv", "finetune_runs.csv"};
}

// ---- freezing ----

std::string to_string(FreezeGranularity g) {
  return g == FreezeGranularity::unstructured ? "unstructured" : "neuron";
}

FreezeGranularity parse_granularity(const std::string& text) {
  if (text == "unstructured") return FreezeGranularity::unstructured;
  if (text == "neuron") return FreezeGranularity::neuron;
  throw ConfigError("unknown freezing granularity '" + text + "' (expected unstructured or neuron)");
}

std::size_t freeze_lowest(ModelParams& params, double percent, FreezeGranularity granularity) {
  if (!(percent >= 0.0 && percent < 100.0)) {
    throw ConfigError("freeze percent must lie in [0, 100)");
  }
  if (granularity == FreezeGranularity::unstructured) {
    const Eigen::Index total = params.size();
    const auto target = static_cast<Eigen::Index>(std::floor(percent * total / 100.0));
    const Eigen::Index have = params.frozen_count();
    if (have >= target) return 0;
    std::vector<Eigen::Index> open;
    for (Eigen::Index i = 0; i < total; ++i) {
      if (!params.frozen.data()[i]) open.push_back(i);
    }
    const double* w = params.weights.data();
    std::stable_sort(open.begin(), open.end(),
                     [w](Eigen::Index a, Eigen::Index b) { return std::abs(w[a]) < std::abs(w[b]); });
    for (Eigen::Index k = 0; k < target - have; ++k) params.frozen.data()[open[k]] = true;
    return static_cast<std::size_t>(target - have);
  }
  const Eigen::Index rows = params.weights.rows();
  const auto target = static_cast<Eigen::Index>(std::floor(percent * rows / 100.0));
  std::vector<Eigen::Index> open;
  Eigen::Index have = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (params.frozen.row(r).all()) {
      ++have;
    } else {
      open.push_back(r);
    }
  }
  if (have >= target) return 0;
  const Eigen::VectorXd norms = params.weights.rowwise().norm();
  std::stable_sort(open.begin(), open.end(),
                   [&norms](Eigen::Index a, Eigen::Index b) { return norms(a) < norms(b); });
  for (Eigen::Index k = 0; k < target - have; ++k) params.frozen.row(open[k]).setConstant(true);
  return static_cast<std::size_t>(target - have);
}

StageFreezer::StageFreezer(std::vector<int> iterations, double percent,
                           FreezeGranularity granularity)
    : iterations_(std::move(iterations)), percent_(percent), granularity_(granularity) {
  if (!(percent >= 0.0 && percent < 100.0)) {
    throw ConfigError("freeze percent must lie in [0, 100)");
  }
}

void StageFreezer::operator()(int iteration, ModelParams& params) const {
  if (std::find(iterations_.begin(), iterations_.end(), iteration) != iterations_.end()) {
    freeze_lowest(params, percent_, granularity_);
  }
}

void FreezeConfig::bind(ConfigBinder& b) {
  data.bind(b);
  model.bind(b);
  train.bind(b, true);
  b.field("freeze.stages", stages);
  b.field("freeze.percent", percent);
  b.choice("freeze.granularity", granularity, [](FreezeGranularity g) { return to_string(g); },
           parse_granularity);
  b.field("freeze.epsilon", epsilon);
  b.field("freeze.alpha", alpha);
  b.field("freeze.test_n", test_n);
  b.field("run.replicates", replicates);
  b.field("run.seed", seed);
}

void FreezeConfig::validate() const {
  if (!(percent >= 0.0 && percent < 100.0)) throw ConfigError("freeze.percent must lie in [0, 100)");
  for (int s : stages) {
    if (s < 1 || s > train.epochs) throw ConfigError("freeze.stages must lie in [1, train.epochs]");
  }
  if (replicates < 1) throw ConfigError("run.replicates must be at least 1");
  if (test_n < 1) throw ConfigError("freeze.test_n must be at least 1");
  if (train.noise_std < 0.0 && !(epsilon > 0.0 && alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("freeze.epsilon must be positive and freeze.alpha in (0, 1)");
  }
}

double FreezeConfig::noise_std() const {
  if (train.noise_std >= 0.0) return train.noise_std;
  return calibrate_sigma(epsilon, alpha, train.iterations(data.n), train.batch_size,
                         train.clip_norm);
}

std::vector<int> FreezeConfig::stage_iterations() const {
  const int per_epoch = train.iterations(data.n) / train.epochs;
  std::vector<int> out;
  for (int s : stages) out.push_back((s - 1) * per_epoch + 1);
  return out;
}

FreezeResult freezing_run(const FreezeConfig& cfg, int jobs) {
  cfg.validate();
  const std::string tag = "freeze";
  const double init_std = cfg.model.resolved_init_std(cfg.data.dim);
  FreezeResult result;
  result.noise_std = cfg.noise_std();
  result.runs.resize(static_cast<std::size_t>(cfg.replicates));
  const StageFreezer freezer(cfg.stage_iterations(), cfg.percent, cfg.granularity);
  parallel_for(result.runs.size(), jobs, [&](std::size_t k) {
    const std::uint64_t rep = k;
    const DataSpec spec = cfg.data.spec(role_seed(cfg.seed, tag, SeedRole::bank, rep));
    const Dataset data =
        generate_dataset(spec, cfg.data.n, role_seed(cfg.seed, tag, SeedRole::data, rep));
    const Dataset test =
        generate_dataset(spec, cfg.test_n, role_seed(cfg.seed, tag, SeedRole::test, rep));
    const ModelParams w0 = init_params(
        {cfg.model.neurons, cfg.data.dim, init_std, role_seed(cfg.seed, tag, SeedRole::init, rep)});
    const DPConfig dp =
        cfg.train.dp(cfg.data.n, result.noise_std, role_seed(cfg.seed, tag, SeedRole::train, rep));

    FreezeRun& run = result.runs[k];
    run.replicate = static_cast<int>(rep);
    const ModelParams plain = train(data, w0, dp);

    TrainHooks hooks;
    hooks.before_step = [&](int t, ModelParams& p) {
      const Eigen::Index before = p.frozen_count();
      freezer(t, p);
      if (p.frozen_count() != before) {
        run.trace.emplace_back(t, static_cast<double>(p.frozen_count()) / static_cast<double>(p.size()));
      }
    };
    hooks.after_step = [&](int, const ModelParams& before, const ModelParams& after) {
      for (Eigen::Index i = 0; i < after.size(); ++i) {
        if (after.frozen.data()[i] &&
            std::memcmp(&before.weights.data()[i], &after.weights.data()[i], sizeof(double)) != 0) {
          run.frozen_constant = false;
        }
      }
    };
    const ModelParams frozen = train(data, w0, dp, nullptr, hooks);
    run.accuracy_without = accuracy(plain, test);
    run.accuracy_with = accuracy(frozen, test);
    run.frozen_fraction =
        static_cast<double>(frozen.frozen_count()) / static_cast<double>(frozen.size());
    run.identical = bitwise_equal(plain, frozen);
  });
  return result;
}

std::vector<std::string> write_outputs(const FreezeResult& r, const std::filesystem::path& dir,
                                       const std::string& ref) {
  {
    CsvWriter csv(dir / "freeze.csv",
                  {"replicate", "noise_std", "accuracy_without", "accuracy_with",
                   "frozen_fraction", "identical", "frozen_constant", "manifest"});
    for (const FreezeRun& run : r.runs) {
      csv.row(run.replicate, r.noise_std, run.accuracy_without, run.accuracy_with,
              run.frozen_fraction, static_cast<int>(run.identical),
              static_cast<int>(run.frozen_constant), ref);
    }
  }
  {
    CsvWriter csv(dir / "freeze_trace.csv", {"replicate", "iteration", "frozen_fraction", "manifest"});
    for (const FreezeRun& run : r.runs) {
      for (const auto& [t, frac] : run.trace) csv.row(run.replicate, t, frac, ref);
    }
  }
  return {"freeze.csv", "freeze_trace.csv"};
}

// ---- single operations ----

namespace {

// The single operations share one feature bank per seed so that gen-data,
// train, attack and bounds agree when given the same run.seed.
constexpr const char* kOpsTag = "ops";

void write_features(const FeatureBank& bank, const std::filesystem::path& path,
                    const std::string& ref) {
  CsvWriter csv(path, {"coordinate", "u_1_maj", "u_1_min", "u_2_maj", "u_2_min", "manifest"});
  const auto& u = bank.matrix();
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    csv.row(static_cast<long>(i), u(i, 0), u(i, 1), u(i, 2), u(i, 3), ref);
  }
}

std::vector<std::string> run_gen_data(const GenDataConfig& cfg, const std::filesystem::path& dir,
                                      const std::string& ref) {
  const DataSpec spec = cfg.data.spec(role_seed(cfg.seed, kOpsTag, SeedRole::bank, 0));
  const Dataset data =
      generate_dataset(spec, cfg.data.n, role_seed(cfg.seed, kOpsTag, SeedRole::data, 0));
  write_dataset(dir / "dataset.bin", data);
  write_features(spec.bank, dir / "features.csv", ref);
  std::array<long, 4> counts{};
  for (const Sample& s : data.samples) ++counts[Cell{s.label, s.group}.index()];
  CsvWriter csv(dir / "dataset_summary.csv",
                {"class", "group", "count", "fraction", "proportion", "manifest"});
  for (Cell c : kAllCells) {
    csv.row(to_string(c.label), to_string(c.group), counts[c.index()],
            static_cast<double>(counts[c.index()]) / static_cast<double>(data.size()),
            spec.proportion(c), ref);
  }
  return {"dataset.bin", "features.csv", "dataset_summary.csv"};
}

std::vector<std::string> run_train(const TrainRunConfig& cfg, const std::filesystem::path& dir,
                                   const std::string& ref) {
  const DataSpec spec = cfg.data.spec(role_seed(cfg.seed, kOpsTag, SeedRole::bank, 0));
  Dataset data;
  if (cfg.data_path.empty()) {
    data = generate_dataset(spec, cfg.data.n, role_seed(cfg.seed, kOpsTag, SeedRole::data, 0));
  } else {
    data = read_dataset(cfg.data_path);
    if (data.dim != cfg.data.dim) throw ConfigError("data.path dimension differs from data.dim");
  }
  const ModelParams w0 =
      init_params({cfg.model.neurons, cfg.data.dim, cfg.model.resolved_init_std(cfg.data.dim),
                   role_seed(cfg.seed, kOpsTag, SeedRole::init, 0)});
  const DPConfig dp = cfg.train.dp(data.size(), cfg.train.noise_std,
                                   role_seed(cfg.seed, kOpsTag, SeedRole::train, 0));
  TrainTrace trace;
  const ModelParams w = train(data, w0, dp, &trace);
  write_checkpoint(dir / "initial.bin", w0);
  write_checkpoint(dir / "checkpoint.bin", w);
  trace.write_csv(dir / "trace.csv", ref);

  CsvWriter csv(dir / "eval.csv",
                {"split", "class", "group", "loss", "loss_stderr", "accuracy", "manifest"});
  std::array<Dataset, 4> by_cell;
  for (const Sample& s : data.samples) by_cell[Cell{s.label, s.group}.index()].samples.push_back(s);
  for (Cell c : kAllCells) {
    const LossEstimate e = evaluate(w, by_cell[c.index()]);
    csv.row(std::string("train"), to_string(c.label), to_string(c.group), e.loss, e.stderr_loss,
            e.accuracy, ref);
  }
  if (cfg.data_path.empty()) {
    if (cfg.n_mc < 1) throw ConfigError("run.n_mc must be at least 1");
    for (Cell c : kAllCells) {
      Rng rng(role_seed(cfg.seed, kOpsTag, SeedRole::eval, 0, c.index()));
      const LossEstimate e = mc_test_loss(w, spec, c, cfg.n_mc, rng);
      csv.row(std::string("test"), to_string(c.label), to_string(c.group), e.loss, e.stderr_loss,
              e.accuracy, ref);
    }
  }
  return {"initial.bin", "checkpoint.bin", "trace.csv", "eval.csv"};
}

std::vector<std::string> run_attack(const AttackRunConfig& cfg, const std::filesystem::path& dir,
                                    const std::string& ref) {
  if (cfg.checkpoint.empty()) throw ConfigError("attack.checkpoint is required");
  const AttackConfig attack = cfg.attack.attack();
  const ModelParams w = read_checkpoint(cfg.checkpoint);
  if (w.dim() != cfg.data.dim) throw ConfigError("checkpoint dimension differs from data.dim");
  const DataSpec spec = cfg.data.spec(role_seed(cfg.seed, kOpsTag, SeedRole::bank, 0));
  CsvWriter csv(dir / "attack.csv",
                {"class", "group", "clean_loss", "clean_stderr", "clean_accuracy", "adv_loss",
                 "adv_stderr", "adv_accuracy", "manifest"});
  for (Cell c : kAllCells) {
    Rng rng(role_seed(cfg.seed, kOpsTag, SeedRole::eval, 1, c.index()));
    const AdversarialEstimate e = adv_loss(w, spec, c, attack, cfg.attack.n_mc, rng);
    csv.row(to_string(c.label), to_string(c.group), e.clean_loss, e.clean_stderr,
            e.clean_accuracy, e.loss, e.stderr_loss, e.accuracy, ref);
  }
  return {"attack.csv"};
}

std::vector<std::string> run_bounds(const BoundsConfig& cfg, const std::filesystem::path& dir,
                                    const std::string& ref) {
  if (cfg.n_mc < 1) throw ConfigError("bounds.n_mc must be at least 1");
  const DataSpec spec = cfg.data.spec(role_seed(cfg.seed, kOpsTag, SeedRole::bank, 0));
  const double init_std = cfg.model.resolved_init_std(cfg.data.dim);
  const ModelParams w0 = init_params(
      {cfg.model.neurons, cfg.data.dim, init_std, role_seed(cfg.seed, kOpsTag, SeedRole::init, 0)});
  ReportInputs in;
  in.iterations = cfg.train.iterations(cfg.data.n);
  in.neurons = cfg.model.neurons;
  in.n = cfg.data.n;
  in.init_std = init_std;
  in.attack_radius = cfg.attack.radius;
  in.attack_norm = cfg.attack.norm;
  for (Cell c : kAllCells) {
    Rng rng(role_seed(cfg.seed, kOpsTag, SeedRole::baseline, 0, c.index()));
    in.init_loss[c.index()] = mc_test_loss(w0, spec, c, cfg.n_mc, rng).loss;
  }
  std::vector<double> grid = cfg.noise_grid;
  if (grid.empty()) grid.push_back(cfg.train.noise_std);
  CsvWriter csv(dir / "bounds.csv", report_csv_header());
  nlohmann::json reports = nlohmann::json::array();
  nlohmann::json warnings = nlohmann::json::array();
  for (double sigma : grid) {
    const DPConfig dp = cfg.train.dp(cfg.data.n, sigma, 0);
    const GroupReport g = build_report(spec, dp, in);
    append_report_rows(csv, g, ref);
    reports.push_back(to_json(g));
    for (const std::string& w : check_regime(spec, dp, cfg.data.n)) {
      warnings.push_back({{"sigma_n", sigma}, {"warning", w}});
    }
  }
  nlohmann::json root{{"manifest", ref},
                      {"init_loss", in.init_loss},
                      {"iterations", in.iterations},
                      {"lower_bound_min_iterations",
                       lower_bound_min_iterations(spec, cfg.train.dp(cfg.data.n, grid.front(), 0),
                                                  cfg.model.neurons)},
                      {"regime_warnings", warnings},
                      {"reports", reports}};
  std::ofstream out(dir / "bounds.json");
  out << root.dump(2) << '\n';
  return {"bounds.csv", "bounds.json"};
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& name,
                                   const std::string& stamp) {
  const std::filesystem::path base = root / name;
  std::filesystem::create_directories(base);
  for (int k = 1;; ++k) {
    const std::filesystem::path dir = base / (k == 1 ? stamp : stamp + "-" + std::to_string(k));
    if (std::filesystem::create_directory(dir)) return dir;
  }
}

template <typename Cfg>
Cfg resolved(const Config& config, const RunOptions& options) {
  Cfg cfg = read_config<Cfg>(config);
  if (options.seed) {
    cfg.seed = *options.seed;
  } else if (options.use_env_seed) {
    cfg.seed = resolve_seed(cfg.seed, std::nullopt);
  }
  return cfg;
}

}  // namespace

void GenDataConfig::bind(ConfigBinder& b) {
  data.bind(b);
  b.field("run.seed", seed);
}

void TrainRunConfig::bind(ConfigBinder& b) {
  data.bind(b);
  b.field("data.path", data_path);
  model.bind(b);
  train.bind(b, true);
  b.field("run.n_mc", n_mc);
  b.field("run.seed", seed);
}

void AttackRunConfig::bind(ConfigBinder& b) {
  data.bind(b);
  attack.bind(b);
  b.field("attack.checkpoint", checkpoint);
  b.field("run.seed", seed);
}

void BoundsConfig::bind(ConfigBinder& b) {
  data.bind(b);
  model.bind(b);
  train.bind(b, true);
  attack.bind(b);
  b.field("bounds.noise_grid", noise_grid);
  b.field("bounds.n_mc", n_mc);
  b.field("run.seed", seed);
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"gen-data", "train",  "attack",   "bounds",
                                                 "phase-sweep", "disparate", "finetune", "freeze"};
  return names;
}

Config resolve_config(const std::string& experiment, const Config& config,
                      const RunOptions& options) {
  if (experiment == "gen-data") return write_config(resolved<GenDataConfig>(config, options));
  if (experiment == "train") return write_config(resolved<TrainRunConfig>(config, options));
  if (experiment == "attack") return write_config(resolved<AttackRunConfig>(config, options));
  if (experiment == "bounds") return write_config(resolved<BoundsConfig>(config, options));
  if (experiment == "phase-sweep") return write_config(resolved<PhaseConfig>(config, options));
  if (experiment == "disparate") return write_config(resolved<DisparateConfig>(config, options));
  if (experiment == "finetune") return write_config(resolved<FinetuneConfig>(config, options));
  if (experiment == "freeze") return write_config(resolved<FreezeConfig>(config, options));
  throw ConfigError("unknown experiment '" + experiment + "'");
}

RunRecord run_experiment(const std::string& experiment, const Config& config,
                         const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  // The resolved config is re-parsed so the run sees exactly what the
  // manifest records.
  const Config cfg = resolve_config(experiment, config, options);
  const RunOptions fixed{options.out_root, options.jobs, options.quiet, std::nullopt, false};
  const std::string ref = cfg.id();
  const std::string stamp = utc_stamp();
  if (!options.quiet) std::cerr << experiment << ": config " << ref << '\n';

  // Parse before creating the run directory so config errors leave no trace.
  std::function<std::vector<std::string>(const std::filesystem::path&)> body;
  if (experiment == "gen-data") {
    auto c = resolved<GenDataConfig>(cfg, fixed);
    c.data.spec(0);
    body = [c, ref](const auto& dir) { return run_gen_data(c, dir, ref); };
  } else if (experiment == "train") {
    auto c = resolved<TrainRunConfig>(cfg, fixed);
    c.train.dp(c.data.n, c.train.noise_std, 0);
    body = [c, ref](const auto& dir) { return run_train(c, dir, ref); };
  } else if (experiment == "attack") {
    auto c = resolved<AttackRunConfig>(cfg, fixed);
    c.attack.attack();
    if (c.checkpoint.empty()) throw ConfigError("attack.checkpoint is required");
    body = [c, ref](const auto& dir) { return run_attack(c, dir, ref); };
  } else if (experiment == "bounds") {
    auto c = resolved<BoundsConfig>(cfg, fixed);
    c.train.dp(c.data.n, c.train.noise_std, 0);
    body = [c, ref](const auto& dir) { return run_bounds(c, dir, ref); };
  } else if (experiment == "phase-sweep") {
    auto c = resolved<PhaseConfig>(cfg, fixed);
    c.grid();
    const int jobs = options.jobs;
    body = [c, ref, jobs](const auto& dir) { return write_outputs(phase_sweep(c, jobs), dir, ref); };
  } else if (experiment == "disparate") {
    auto c = resolved<DisparateConfig>(cfg, fixed);
    c.validate();
    c.data.spec(0);
    const int jobs = options.jobs;
    body = [c, ref, jobs](const auto& dir) {
      return write_outputs(disparate_impact_run(c, jobs), dir, ref);
    };
  } else if (experiment == "finetune") {
    auto c = resolved<FinetuneConfig>(cfg, fixed);
    c.validate();
    const int jobs = options.jobs;
    body = [c, ref, jobs](const auto& dir) {
      return write_outputs(pretrain_finetune_run(c, jobs), dir, ref);
    };
  } else {
    auto c = resolved<FreezeConfig>(cfg, fixed);
    c.validate();
    c.data.spec(0);
    const int jobs = options.jobs;
    body = [c, ref, jobs](const auto& dir) { return write_outputs(freezing_run(c, jobs), dir, ref); };
  }

  const std::filesystem::path dir = make_run_dir(options.out_root, experiment, stamp);
  std::vector<std::string> outputs;
  try {
    outputs = body(dir);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    throw;
  }
  {
    std::ofstream ini(dir / "config.ini");
    ini << cfg.to_ini();
  }
  outputs.push_back("config.ini");

  RunRecord record;
  record.dir = dir;
  record.manifest.experiment = experiment;
  record.manifest.config = cfg;
  record.manifest.outputs = outputs;
  record.manifest.created = stamp;
  record.manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  record.manifest.save(dir / "manifest.json");
  if (!options.quiet) {
    std::cerr << experiment << ": wrote " << dir.string() << " in "
              << format_number(std::round(record.manifest.wall_seconds * 10.0) / 10.0) << " s\n";
  }
  return record;
}

RunRecord rerun_manifest(const std::filesystem::path& manifest_path, const RunOptions& options) {
  const RunManifest m = RunManifest::load(manifest_path);
  RunOptions o = options;
  o.seed.reset();
  o.use_env_seed = false;
  return run_experiment(m.experiment, m.config, o);
}

}  // namespace dpfl
