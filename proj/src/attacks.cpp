#include "dpfl/attacks.hpp"

#include <cmath>

#include "dpfl/stats.hpp"

namespace dpfl {

void AttackConfig::validate() const {
  if (!(radius >= 0.0)) throw ConfigError("attack.radius must be nonnegative");
  if (steps < 1) throw ConfigError("attack.steps must be at least 1");
}

void project_to_ball(Input& perturbation, PerturbationNorm norm, double radius) {
  if (norm == PerturbationNorm::linf) {
    perturbation = perturbation.cwiseMax(-radius).cwiseMin(radius);
    return;
  }
  const double n = perturbation.norm();
  if (n > radius) perturbation *= radius / n;
}

double perturbation_norm(const Input& perturbation, PerturbationNorm norm) {
  return norm == PerturbationNorm::linf ? perturbation.cwiseAbs().maxCoeff() : perturbation.norm();
}

Input pgd(const ModelParams& params, const Input& x, Label y, const AttackConfig& cfg) {
  cfg.validate();
  Input best = x;
  if (cfg.radius == 0.0) return best;
  double best_loss = loss(params.weights, x, y);
  const double step = cfg.effective_step_size();
  Input zeta = Input::Zero(x.rows(), 2);
  for (int s = 0; s < cfg.steps; ++s) {
    const Input candidate = x + zeta;
    const Input g = input_gradient(params.weights, candidate, y);
    if (cfg.norm == PerturbationNorm::linf) {
      zeta += step * g.array().sign().matrix();
    } else {
      const double gn = g.norm();
      if (gn == 0.0) break;
      zeta += (step / gn) * g;
    }
    project_to_ball(zeta, cfg.norm, cfg.radius);
    const Input attacked = x + zeta;
    const double l = loss(params.weights, attacked, y);
    if (l > best_loss) {
      best_loss = l;
      best = attacked;
    }
  }
  return best;
}

namespace {

AdversarialEstimate summarize(const RunningStats& adv, const RunningStats& adv_acc,
                              const RunningStats& clean, const RunningStats& clean_acc) {
  AdversarialEstimate est;
  est.loss = adv.mean();
  est.stderr_loss = adv.standard_error();
  est.accuracy = adv_acc.mean();
  est.clean_loss = clean.mean();
  est.clean_stderr = clean.standard_error();
  est.clean_accuracy = clean_acc.mean();
  return est;
}

}  // namespace

AdversarialEstimate adv_loss(const ModelParams& params, const DataSpec& spec, Cell cell,
                             const AttackConfig& cfg, int n_mc, Rng& rng) {
  if (n_mc < 1) throw ConfigError("n_mc must be at least 1");
  RunningStats adv, adv_acc, clean, clean_acc;
  for (int i = 0; i < n_mc; ++i) {
    const Sample s = draw_conditional(spec, cell, rng);
    const Input attacked = pgd(params, s.patches, s.label, cfg);
    clean.add(loss(params.weights, s.patches, s.label));
    clean_acc.add(correctness(params.weights, s.patches, s.label));
    adv.add(loss(params.weights, attacked, s.label));
    adv_acc.add(correctness(params.weights, attacked, s.label));
  }
  return summarize(adv, adv_acc, clean, clean_acc);
}

AdversarialEstimate adv_loss(const ModelParams& params, const Dataset& data,
                             const AttackConfig& cfg) {
  RunningStats adv, adv_acc, clean, clean_acc;
  for (const Sample& s : data.samples) {
    const Input attacked = pgd(params, s.patches, s.label, cfg);
    clean.add(loss(params.weights, s.patches, s.label));
    clean_acc.add(correctness(params.weights, s.patches, s.label));
    adv.add(loss(params.weights, attacked, s.label));
    adv_acc.add(correctness(params.weights, attacked, s.label));
  }
  return summarize(adv, adv_acc, clean, clean_acc);
}

std::string to_string(PerturbationNorm p) { return p == PerturbationNorm::l2 ? "2" : "inf"; }

PerturbationNorm parse_norm(const std::string& text) {
  if (text == "2" || text == "l2") return PerturbationNorm::l2;
  if (text == "inf" || text == "linf") return PerturbationNorm::linf;
  throw ConfigError("unknown perturbation norm '" + text + "' (expected 2 or inf)");
}

}  // namespace dpfl
