#pragma once

#include <cstdint>
#include <string>

#include "dpfl/common.hpp"
#include "dpfl/datagen.hpp"
#include "dpfl/network.hpp"

namespace dpfl {

enum class PerturbationNorm { l2, linf };

struct AttackConfig {
  PerturbationNorm norm = PerturbationNorm::linf;
  double radius = 0.02;
  int steps = 20;
  /// Non-positive selects the default 2.5 * radius / steps.
  double step_size = 0.0;
  std::uint64_t seed = 0;

  double effective_step_size() const { return step_size > 0.0 ? step_size : 2.5 * radius / steps; }
  void validate() const;
};

/// Projects a joint perturbation (d x 2) onto the radius ball of the chosen norm.
void project_to_ball(Input& perturbation, PerturbationNorm norm, double radius);

/// Norm of the joint perturbation, treated as one vector in R^{2d}.
double perturbation_norm(const Input& perturbation, PerturbationNorm norm);

/// Projected gradient ascent on the loss from zero perturbation; returns the
/// highest-loss iterate, so loss(result) >= loss(x).
Input pgd(const ModelParams& params, const Input& x, Label y, const AttackConfig& cfg);

struct AdversarialEstimate {
  double loss = 0.0;
  double accuracy = 0.0;
  double stderr_loss = 0.0;
  double clean_loss = 0.0;
  double clean_accuracy = 0.0;
  double clean_stderr = 0.0;
};

/// Monte Carlo adversarial test loss on D_{i,j}. Draws the same sample stream
/// as mc_test_loss for the same rng state.
AdversarialEstimate adv_loss(const ModelParams& params, const DataSpec& spec, Cell cell,
                             const AttackConfig& cfg, int n_mc, Rng& rng);

/// Adversarial metrics over a fixed sample set.
AdversarialEstimate adv_loss(const ModelParams& params, const Dataset& data,
                             const AttackConfig& cfg);

std::string to_string(PerturbationNorm p);
PerturbationNorm parse_norm(const std::string& text);

}  // namespace dpfl
