#include "dpfl/dp_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dpfl/csv.hpp"

namespace dpfl {

void DPConfig::validate(std::size_t n) const {
  if (!(learning_rate >= 0.0)) {
    throw ConfigError("dp.eta must be nonnegative");
  }
  if (iterations < 1) throw ConfigError("dp.iters must be at least 1");
  if (batch_size < 1) throw ConfigError("dp.batch must be at least 1");
  if (n > 0 && static_cast<std::size_t>(batch_size) > n) {
    throw ConfigError("dp.batch exceeds the training set size");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("dp.sigma_n must be nonnegative");
  if (budget) {
    if (!(budget->epsilon > 0.0)) throw ConfigError("dp.epsilon must be positive");
    if (!(budget->alpha > 0.0 && budget->alpha < 1.0)) {
      throw ConfigError("dp.alpha must lie in (0, 1)");
    }
  }
}

void TrainTrace::write_csv(const std::filesystem::path& path,
                           const std::string& manifest_ref) const {
  CsvWriter csv(path, {"iter", "mean_loss", "grad_norm_mean", "clip_fraction", "noise_norm",
                       "manifest"});
  for (const StepRecord& s : steps) {
    csv.row(s.iteration, s.mean_loss, s.grad_norm_mean, s.clip_fraction, s.noise_norm,
            manifest_ref);
  }
}

std::vector<std::size_t> subsample(std::size_t n, const DPConfig& cfg, Rng& rng) {
  std::vector<std::size_t> batch;
  if (n == 0) return batch;
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  if (cfg.subsampling == Subsampling::poisson) {
    std::bernoulli_distribution include(std::min(1.0, static_cast<double>(b) / n));
    for (std::size_t i = 0; i < n; ++i) {
      if (include(rng)) batch.push_back(i);
    }
    return batch;
  }
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  if (b >= n) return pool;
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(b);
  std::sort(pool.begin(), pool.end());
  return pool;
}

StepRecord dpsgd_step(ModelParams& params, const Dataset& data,
                      const std::vector<std::size_t>& batch, const DPConfig& cfg, Rng& rng) {
  const Eigen::Index rows = params.weights.rows();
  const Eigen::Index dim = params.weights.cols();
  const auto count = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index m = rows / 2;

  // Each per-sample gradient is S_i X_i^T with S_i (2m x 2), so the clipped sum
  // is one product of the stacked, rescaled S_i with the stacked inputs.
  Eigen::MatrixXd coeffs(rows, 2 * count);
  Eigen::MatrixXd inputs(dim, 2 * count);

  StepRecord rec;
  rec.batch_size = static_cast<int>(count);
  rec.grad_norm_min = count > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  rec.min_loss = count > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  int clipped = 0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const Sample& s = data.samples.at(batch[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd pre = params.weights * s.patches;
    const Eigen::Vector2d f = detail::outputs_from_preactivations(pre);
    const Eigen::Vector2d prob = softmax<double>(f);
    const int yi = index_of(s.label);
    const double sample_loss = softplus(f(1 - yi) - f(yi));

    Eigen::MatrixXd terms = (pre.array() >= 0.0).cast<double>().matrix();
    terms.topRows(m) *= (prob(0) - (yi == 0 ? 1.0 : 0.0)) / static_cast<double>(m);
    terms.bottomRows(m) *= (prob(1) - (yi == 1 ? 1.0 : 0.0)) / static_cast<double>(m);

    const Eigen::Matrix2d gram = s.patches.transpose() * s.patches;
    const double norm = std::sqrt(std::max(0.0, (terms * gram).cwiseProduct(terms).sum()));
    if (!std::isfinite(norm) || !std::isfinite(sample_loss)) {
      std::ostringstream msg;
      msg << "non-finite gradient at sample " << batch[static_cast<std::size_t>(i)]
          << " (loss " << sample_loss << ", grad norm " << norm << ")";
      throw std::runtime_error(msg.str());
    }
    double scale = 1.0;
    if (cfg.clipping_enabled() && norm > cfg.clip_norm) {
      scale = cfg.clip_norm / norm;
      ++clipped;
    }
    coeffs.middleCols(2 * i, 2) = scale == 1.0 ? terms : (scale * terms).eval();
    inputs.middleCols(2 * i, 2) = s.patches;

    rec.mean_loss += sample_loss;
    rec.min_loss = std::min(rec.min_loss, sample_loss);
    rec.grad_norm_mean += norm;
    rec.grad_norm_min = std::min(rec.grad_norm_min, norm);
    rec.grad_norm_max = std::max(rec.grad_norm_max, norm);
    rec.max_clipped_norm = std::max(rec.max_clipped_norm, scale * norm);
  }
  if (count > 0) {
    rec.mean_loss /= static_cast<double>(count);
    rec.grad_norm_mean /= static_cast<double>(count);
    rec.clip_fraction = static_cast<double>(clipped) / static_cast<double>(count);
  }

  const double divisor = cfg.divide_by_realized
                             ? static_cast<double>(std::max<Eigen::Index>(count, 1))
                             : static_cast<double>(cfg.batch_size);
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(rows, dim);
  if (count > 0) update.noalias() = coeffs * inputs.transpose();

  if (cfg.noise_std > 0.0) {
    Eigen::MatrixXd noise(rows, dim);
    fill_gaussian(noise, cfg.noise_std, rng);
    rec.noise_norm = noise.norm();
    if (cfg.noise_scaling == NoiseScaling::per_step) {
      update = (cfg.learning_rate / divisor) * update - cfg.learning_rate * noise;
    } else {
      update = (cfg.learning_rate / divisor) * (update + noise);
    }
  } else {
    update *= cfg.learning_rate / divisor;
  }
  params.weights = params.frozen.select(params.weights, params.weights - update);
  return rec;
}

ModelParams train(const Dataset& data, ModelParams initial, const DPConfig& cfg, TrainTrace* trace,
                  const TrainHooks& hooks) {
  if (data.empty()) throw ConfigError("training set is empty");
  cfg.validate(data.size());
  initial.validate();
  if (initial.dim() != data.dim) throw std::invalid_argument("model and data dimension differ");

  Rng batch_rng(stream_seed(cfg.seed, 0));
  Rng noise_rng(stream_seed(cfg.seed, 1));
  ModelParams params = std::move(initial);
  if (trace) trace->steps.reserve(trace->steps.size() + static_cast<std::size_t>(cfg.iterations));
  for (int t = 1; t <= cfg.iterations; ++t) {
    if (hooks.before_step) hooks.before_step(t, params);
    const std::vector<std::size_t> batch = subsample(data.size(), cfg, batch_rng);
    std::optional<ModelParams> before;
    if (hooks.after_step) before = params;
    StepRecord rec = dpsgd_step(params, data, batch, cfg, noise_rng);
    rec.iteration = t;
    if (hooks.after_step) hooks.after_step(t, *before, params);
    if (trace) trace->steps.push_back(rec);
  }
  return params;
}

ModelParams sgd_pretrain(const Dataset& data, ModelParams initial, double learning_rate,
                         int iterations, int batch_size, std::uint64_t seed) {
  DPConfig cfg;
  cfg.learning_rate = learning_rate;
  cfg.iterations = iterations;
  cfg.batch_size = batch_size;
  cfg.clip_norm = 0.0;
  cfg.noise_std = 0.0;
  cfg.subsampling = Subsampling::fixed_uniform;
  cfg.seed = seed;
  return train(data, std::move(initial), cfg);
}

double calibrate_sigma(double epsilon, double alpha, int iterations, int batch_size,
                       double clip_norm) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (iterations < 1) throw ConfigError("iterations must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("calibration needs a positive clipping threshold");
  return (clip_norm / batch_size) * std::sqrt(2.0 * iterations * std::log(1.25 / alpha)) / epsilon;
}

namespace {

void check_common(std::vector<std::string>& warnings, int dim, double min_norm, double max_norm,
                  double sigma_p, const DPConfig& cfg, std::size_t n, double delta) {
  const double n_d = static_cast<double>(n);
  if (dim < std::log(n_d / delta)) {
    warnings.push_back("d = " + std::to_string(dim) + " < log(n/delta) = " +
                       std::to_string(std::log(n_d / delta)));
  }
  if (cfg.batch_size < n_d) {
    warnings.push_back("B = " + std::to_string(cfg.batch_size) + " < n = " + std::to_string(n));
  }
  if (min_norm < sigma_p) {
    warnings.push_back("smallest feature norm " + std::to_string(min_norm) + " < sigma_p " +
                       std::to_string(sigma_p));
  }
  if (sigma_p < cfg.noise_std) {
    warnings.push_back("sigma_p " + std::to_string(sigma_p) + " < sigma_n " +
                       std::to_string(cfg.noise_std));
  }
  const double root_d = std::sqrt(static_cast<double>(dim));
  const double clip = std::max(cfg.clip_norm, 0.0);
  const double eta_max = 1.0 / ((clip + root_d * cfg.noise_std) * (max_norm + root_d * sigma_p));
  if (cfg.learning_rate > eta_max) {
    warnings.push_back("eta = " + std::to_string(cfg.learning_rate) + " exceeds " +
                       std::to_string(eta_max));
  }
}

}  // namespace

std::vector<std::string> check_regime(const DataSpec& spec, const DPConfig& cfg, std::size_t n,
                                      double delta) {
  std::vector<std::string> warnings;
  const auto& norms = spec.bank.norms();
  check_common(warnings, spec.bank.dim(), *std::min_element(norms.begin(), norms.end()),
               spec.bank.max_norm(), spec.sigma_p, cfg, n, delta);
  return warnings;
}

std::vector<std::string> check_finetune_regime(const SimpleBank& bank, double sigma_p,
                                               const DPConfig& cfg, std::size_t n, double delta) {
  std::vector<std::string> warnings;
  const double a = bank.norm(Label::one);
  const double b = bank.norm(Label::two);
  check_common(warnings, bank.dim(), std::min(a, b), std::max(a, b), sigma_p, cfg, n, delta);
  return warnings;
}

std::string to_string(Subsampling s) {
  return s == Subsampling::poisson ? "poisson" : "fixed";
}

Subsampling parse_subsampling(const std::string& text) {
  if (text == "poisson") return Subsampling::poisson;
  if (text == "fixed" || text == "fixed-uniform" || text == "fixed_uniform") {
    return Subsampling::fixed_uniform;
  }
  throw ConfigError("unknown subsampling mode '" + text + "'");
}

std::string to_string(NoiseScaling s) {
  return s == NoiseScaling::per_step ? "per_step" : "batch_mean";
}

NoiseScaling parse_noise_scaling(const std::string& text) {
  if (text == "per_step") return NoiseScaling::per_step;
  if (text == "batch_mean") return NoiseScaling::batch_mean;
  throw ConfigError("unknown noise scaling '" + text + "'");
}

}  // namespace dpfl
