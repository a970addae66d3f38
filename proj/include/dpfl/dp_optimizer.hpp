#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpfl/common.hpp"
#include "dpfl/datagen.hpp"
#include "dpfl/network.hpp"

namespace dpfl {

enum class Subsampling { poisson, fixed_uniform };

/// Where the Gaussian noise enters the update.
enum class NoiseScaling {
  per_step,    // W - (eta/B) sum clip(g) + eta n      (literal update rule)
  batch_mean,  // W - (eta/B) (sum clip(g) + n)        (noise inside the mean)
};

struct PrivacyBudget {
  double epsilon = 1.0;
  double alpha = 1e-5;
};

struct DPConfig {
  double learning_rate = 0.1;
  int batch_size = 1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double noise_std = 0.0;
  int iterations = 1;
  Subsampling subsampling = Subsampling::fixed_uniform;
  std::uint64_t seed = 0;
  /// Divide the gradient sum by the realized batch size instead of B.
  bool divide_by_realized = false;
  NoiseScaling noise_scaling = NoiseScaling::per_step;
  std::optional<PrivacyBudget> budget;

  bool clipping_enabled() const { return clip_norm > 0.0; }
  /// Throws ConfigError on eta <= 0, T < 1, B < 1 or sigma_n < 0. `n` bounds B when nonzero.
  void validate(std::size_t n = 0) const;
};

struct StepRecord {
  int iteration = 0;
  int batch_size = 0;
  double mean_loss = 0.0;
  double min_loss = 0.0;  // smallest per-sample loss in the batch
  double grad_norm_min = 0.0;
  double grad_norm_mean = 0.0;
  double grad_norm_max = 0.0;
  double max_clipped_norm = 0.0;
  double clip_fraction = 0.0;
  double noise_norm = 0.0;
};

struct TrainTrace {
  std::vector<StepRecord> steps;

  /// One row per iteration: iter, mean_loss, grad_norm_mean, clip_fraction, noise_norm.
  void write_csv(const std::filesystem::path& path, const std::string& manifest_ref = "") const;
};

/// Optional callbacks around each iteration; `iteration` counts from 1.
struct TrainHooks {
  std::function<void(int iteration, ModelParams& params)> before_step;
  std::function<void(int iteration, const ModelParams& before, const ModelParams& after)>
      after_step;
};

/// g / max(1, |g|/C); identity when clip <= 0.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> clip(
    const Eigen::MatrixBase<Derived>& g, double clip_norm) {
  using Scalar = typename Derived::Scalar;
  if (!(clip_norm > 0.0)) return g;
  const Scalar norm = g.norm();
  if (norm <= Scalar(clip_norm)) return g;
  return g / (norm / Scalar(clip_norm));
}

/// Indices of one batch. Poisson includes each index with probability B/n
/// (possibly none); fixed-uniform draws exactly B without replacement, sorted.
std::vector<std::size_t> subsample(std::size_t n, const DPConfig& cfg, Rng& rng);

/// One private update in place. Frozen coordinates receive neither gradient
/// nor noise. Throws std::runtime_error on a non-finite gradient.
StepRecord dpsgd_step(ModelParams& params, const Dataset& data,
                      const std::vector<std::size_t>& batch, const DPConfig& cfg, Rng& rng);

/// T rounds of subsample + dpsgd_step, seeded by cfg.seed.
ModelParams train(const Dataset& data, ModelParams initial, const DPConfig& cfg,
                  TrainTrace* trace = nullptr, const TrainHooks& hooks = {});

/// Non-private SGD: clipping disabled, no noise, fixed-uniform batches.
ModelParams sgd_pretrain(const Dataset& data, ModelParams initial, double learning_rate,
                         int iterations, int batch_size, std::uint64_t seed);

/// Loose Gaussian-mechanism estimate with advanced-composition scaling,
/// sigma_n = (C/B) sqrt(2 T ln(1.25/alpha)) / epsilon. The result is noise on
/// the mean gradient; it is not a tight accountant.
double calibrate_sigma(double epsilon, double alpha, int iterations, int batch_size,
                       double clip_norm);

/// Unit-constant check of the regime conditions used by the test-loss bounds.
/// Returns human-readable warnings; an empty result means every clause holds.
std::vector<std::string> check_regime(const DataSpec& spec, const DPConfig& cfg, std::size_t n,
                                      double delta = 0.05);
/// Same clauses for the pretrain/finetune distributions.
std::vector<std::string> check_finetune_regime(const SimpleBank& bank, double sigma_p,
                                               const DPConfig& cfg, std::size_t n,
                                               double delta = 0.05);

std::string to_string(Subsampling s);
Subsampling parse_subsampling(const std::string& text);
std::string to_string(NoiseScaling s);
NoiseScaling parse_noise_scaling(const std::string& text);

}  // namespace dpfl
