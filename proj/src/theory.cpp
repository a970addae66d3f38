#include "dpfl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpfl/stats.hpp"

namespace dpfl {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double clip_factor(double clip_norm, double feature_norm, double sigma_p, int dim) {
  if (!(clip_norm > 0.0)) return 1.0;
  return clip_norm / (feature_norm + sigma_p * std::sqrt(static_cast<double>(dim)));
}

}  // namespace

CellQuantities cell_quantities(const DataSpec& spec, const DPConfig& cfg) {
  CellQuantities q;
  for (Cell c : kAllCells) {
    const auto i = static_cast<std::size_t>(c.index());
    const double norm = spec.bank.norm(c);
    q.fnr[i] = cfg.noise_std > 0.0 ? norm / cfg.noise_std : kInf;
    q.clip_factor[i] = clip_factor(cfg.clip_norm, norm, spec.sigma_p, spec.bank.dim());
    q.proportion[i] = spec.proportion(c);
  }
  return q;
}

LossEstimate mc_test_loss(const ModelParams& params, const DataSpec& spec, Cell cell, int n_mc,
                          Rng& rng) {
  if (n_mc < 1) throw ConfigError("n_mc must be at least 1");
  RunningStats losses, correct;
  for (int i = 0; i < n_mc; ++i) {
    const Sample s = draw_conditional(spec, cell, rng);
    losses.add(loss(params.weights, s.patches, s.label));
    correct.add(correctness(params.weights, s.patches, s.label));
  }
  return {losses.mean(), correct.mean(), losses.standard_error()};
}

LossEstimate evaluate(const ModelParams& params, const Dataset& data) {
  RunningStats losses, correct;
  for (const Sample& s : data.samples) {
    losses.add(loss(params.weights, s.patches, s.label));
    correct.add(correctness(params.weights, s.patches, s.label));
  }
  return {losses.mean(), correct.mean(), losses.standard_error()};
}

UpperBound upper_bound(Cell cell, int iterations, double init_loss, const DataSpec& spec,
                       const DPConfig& cfg, int neurons, std::size_t n) {
  const CellQuantities q = cell_quantities(spec, cfg);
  const auto i = static_cast<std::size_t>(cell.index());
  const double lambda = q.clip_factor[i];
  const double gamma = q.proportion[i];
  const double norm = spec.bank.norm(cell);
  UpperBound b;
  b.vanishing = std::exp(-lambda * gamma * norm * norm * iterations / neurons) * init_loss;
  b.generalization = 1.0 / (std::sqrt(static_cast<double>(n)) * gamma * lambda);
  b.privacy = std::isinf(q.fnr[i]) ? 0.0 : neurons / (lambda * gamma * q.fnr[i]);
  return b;
}

double lower_bound_min_iterations(const DataSpec& spec, const DPConfig& cfg, int neurons) {
  double smallest = kInf;
  for (Cell c : kAllCells) {
    const double norm = spec.bank.norm(c);
    smallest = std::min(smallest, spec.proportion(c) * norm * norm);
  }
  const double rate = cfg.learning_rate * smallest / neurons;
  if (rate >= 1.0) return 1.0;
  if (rate <= 0.0) return kInf;
  return -1.0 / std::log1p(-rate);
}

LowerBound lower_bound(Cell cell, int iterations, double init_loss, const DataSpec& spec,
                       const DPConfig& cfg, int neurons, std::size_t n) {
  const double gamma = spec.proportion(cell);
  const double norm = spec.bank.norm(cell);
  const double dim = spec.bank.dim();
  LowerBound b;
  b.vanishing = std::exp(-gamma * norm * norm * iterations / neurons) * init_loss;
  // d sigma_p^2 / (gamma F^2) with F = |u| / sigma_n.
  b.privacy = dim * spec.sigma_p * spec.sigma_p * cfg.noise_std * cfg.noise_std /
              (gamma * norm * norm);
  b.generalization = std::sqrt(1.0 / static_cast<double>(n)) / gamma;
  b.iterations_sufficient = iterations >= lower_bound_min_iterations(spec, cfg, neurons);
  return b;
}

AdversarialBound adv_bound(double base_upper, int iterations, const DPConfig& cfg, int neurons,
                           int dim, double radius, PerturbationNorm norm, double init_std) {
  const double d = dim;
  const double t = iterations;
  const double dim_factor = norm == PerturbationNorm::linf ? d : std::sqrt(d);
  const double clip = std::max(cfg.clip_norm, 0.0);
  const double growth = t * clip / neurons + std::sqrt(t * d) * cfg.noise_std / neurons +
                        std::sqrt(d) * init_std;
  return {base_upper, growth * radius * dim_factor};
}

MixtureBounds mixture_bounds(const std::array<double, 4>& cell_bounds,
                             const std::array<double, 4>& proportions) {
  MixtureBounds out;
  for (int k = 0; k < 2; ++k) {
    double class_mass = 0.0, class_sum = 0.0, group_mass = 0.0, group_sum = 0.0;
    for (Cell c : kAllCells) {
      const auto i = static_cast<std::size_t>(c.index());
      if (index_of(c.label) == k) {
        class_mass += proportions[i];
        class_sum += proportions[i] * cell_bounds[i];
      }
      if (index_of(c.group) == k) {
        group_mass += proportions[i];
        group_sum += proportions[i] * cell_bounds[i];
      }
    }
    out.per_class[k] = class_mass > 0.0 ? class_sum / class_mass : std::nan("");
    out.per_group[k] = group_mass > 0.0 ? group_sum / group_mass : std::nan("");
  }
  return out;
}

double finetune_L_tilde(double theta, double norm_u1, double norm_u2, double c1, double c3,
                        double sigma_p) {
  if (!(theta >= 0.0 && theta <= std::acos(-1.0) / 2.0 + 1e-12)) {
    throw ConfigError("theta must lie in [0, pi/2]");
  }
  const double noise = c3 * sigma_p * sigma_p;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  // -ln(e^a / (e^a + e^b)) = softplus(b - a).
  const double class2 = softplus(noise - c1 * c * norm_u2 * norm_u2);
  const double class1 = softplus(c1 * s * norm_u1 * norm_u1 + noise - c1 * c * norm_u1 * norm_u1);
  return 0.5 * class2 + 0.5 * class1;
}

FinetuneBound finetune_bound(const FinetuneSetting& s) {
  const double norm = s.feature_norm;
  const double lambda = clip_factor(s.clip_norm, norm, s.sigma_p, s.dim);
  const double root_d = std::sqrt(static_cast<double>(s.dim));
  FinetuneBound b;
  b.vanishing = std::exp(-lambda * norm * norm * s.iterations / s.neurons) *
                finetune_L_tilde(s.theta, norm, norm, s.c1, s.c3, s.sigma_p);
  b.generalization = root_d / (std::sqrt(static_cast<double>(s.n)) * lambda);
  b.privacy = s.neurons * root_d * s.noise_std / (lambda * norm);
  return b;
}

double gamma_fn(double x, double t, double a) {
  if (!(t > 0.0 && t <= 1.0)) throw std::domain_error("gamma_fn: t must lie in (0, 1]");
  if (!(a > 0.0)) throw std::domain_error("gamma_fn: a must be positive");
  if (!(x >= -a)) throw std::domain_error("gamma_fn: x must be at least -a");
  if (x >= 0.0) return 1.0;
  return std::log1p(t * std::expm1(-a)) / (-a);
}

double increment_gap_scale(double learning_rate, double clip_norm, int dim, double noise_std,
                           double max_feature_norm, double sigma_p) {
  const double root_d = std::sqrt(static_cast<double>(dim));
  return learning_rate * (std::max(clip_norm, 0.0) + root_d * noise_std) *
         (max_feature_norm + root_d * sigma_p);
}

IncrementProbe IncrementProbe::sample(const DataSpec& spec, int per_cell, Rng& rng) {
  std::vector<Sample> probes;
  probes.reserve(static_cast<std::size_t>(4 * per_cell));
  for (Cell c : kAllCells) {
    for (int i = 0; i < per_cell; ++i) probes.push_back(draw_conditional(spec, c, rng));
  }
  return IncrementProbe(std::move(probes));
}

void IncrementProbe::record(int iteration, const ModelParams& before, const ModelParams& after) {
  Step step;
  step.iteration = iteration;
  step.deltas.resize(static_cast<Eigen::Index>(probes_.size()), 2);
  for (std::size_t p = 0; p < probes_.size(); ++p) {
    const Sample& s = probes_[p];
    const Eigen::Vector2d f0 = outputs(before.weights, s.patches);
    const Eigen::Vector2d f1 = outputs(after.weights, s.patches);
    const int yi = index_of(s.label);
    step.deltas(static_cast<Eigen::Index>(p), 0) = f1(yi) - f0(yi);
    step.deltas(static_cast<Eigen::Index>(p), 1) = f1(1 - yi) - f0(1 - yi);
  }
  steps_.push_back(std::move(step));
}

double IncrementProbe::max_gap() const {
  double gap = 0.0;
  for (const Step& s : steps_) {
    if (s.deltas.rows() > 0) gap = std::max(gap, (s.deltas.col(1) - s.deltas.col(0)).cwiseAbs().maxCoeff());
  }
  return gap;
}

std::size_t IncrementProbe::violations(double scale) const {
  std::size_t count = 0;
  for (const Step& s : steps_) {
    count += static_cast<std::size_t>(
        ((s.deltas.col(1) - s.deltas.col(0)).cwiseAbs().array() > scale).count());
  }
  return count;
}

std::pair<double, double> IncrementProbe::cell_mean(std::size_t step, Cell cell) const {
  const Step& s = steps_.at(step);
  double own = 0.0, other = 0.0;
  int count = 0;
  for (std::size_t p = 0; p < probes_.size(); ++p) {
    if (probes_[p].label != cell.label || probes_[p].group != cell.group) continue;
    own += s.deltas(static_cast<Eigen::Index>(p), 0);
    other += s.deltas(static_cast<Eigen::Index>(p), 1);
    ++count;
  }
  if (count == 0) return {0.0, 0.0};
  return {own / count, other / count};
}

GroupReport build_report(const DataSpec& spec, const DPConfig& cfg, const ReportInputs& in) {
  const CellQuantities q = cell_quantities(spec, cfg);
  GroupReport report;
  report.noise_std = cfg.noise_std;
  std::array<double, 4> uppers{};
  for (Cell c : kAllCells) {
    const auto i = static_cast<std::size_t>(c.index());
    CellReport& cr = report.cells[i];
    cr.cell = c;
    cr.fnr = q.fnr[i];
    cr.clip_factor = q.clip_factor[i];
    cr.proportion = q.proportion[i];
    cr.upper = upper_bound(c, in.iterations, in.init_loss[i], spec, cfg, in.neurons, in.n);
    cr.lower = lower_bound(c, in.iterations, in.init_loss[i], spec, cfg, in.neurons, in.n);
    if (in.attack_radius) {
      cr.adversarial_bound = adv_bound(cr.upper.total(), in.iterations, cfg, in.neurons,
                                       spec.bank.dim(), *in.attack_radius, in.attack_norm,
                                       in.init_std);
    }
    uppers[i] = cr.upper.total();
  }
  report.mixture = mixture_bounds(uppers, q.proportion);
  return report;
}

nlohmann::json to_json(const GroupReport& report) {
  nlohmann::json root;
  root["sigma_n"] = report.noise_std;
  for (const CellReport& cr : report.cells) {
    nlohmann::json cell;
    cell["fnr"] = cr.fnr;
    cell["clip_factor"] = cr.clip_factor;
    cell["proportion"] = cr.proportion;
    cell["upper_bound"] = {{"vanishing", cr.upper.vanishing},
                           {"generalization", cr.upper.generalization},
                           {"privacy", cr.upper.privacy},
                           {"total", cr.upper.total()}};
    cell["lower_bound"] = {{"vanishing", cr.lower.vanishing},
                           {"privacy", cr.lower.privacy},
                           {"generalization", cr.lower.generalization},
                           {"total", cr.lower.total()},
                           {"iterations_sufficient", cr.lower.iterations_sufficient}};
    if (cr.adversarial_bound) {
      cell["adversarial_bound"] = {{"base", cr.adversarial_bound->base},
                                   {"perturbation", cr.adversarial_bound->perturbation},
                                   {"total", cr.adversarial_bound->total()}};
    }
    if (cr.clean) {
      cell["clean"] = {{"loss", cr.clean->loss},
                       {"stderr", cr.clean->stderr_loss},
                       {"accuracy", cr.clean->accuracy}};
    }
    if (cr.adversarial) {
      cell["adversarial"] = {{"loss", cr.adversarial->loss},
                             {"stderr", cr.adversarial->stderr_loss},
                             {"accuracy", cr.adversarial->accuracy}};
    }
    root["classes"][to_string(cr.cell.label)][to_string(cr.cell.group)] = std::move(cell);
  }
  root["mixture"] = {{"class", {{"1", report.mixture.per_class[0]}, {"2", report.mixture.per_class[1]}}},
                     {"group", {{"maj", report.mixture.per_group[0]}, {"min", report.mixture.per_group[1]}}}};
  return root;
}

std::vector<std::string> report_csv_header() {
  return {"sigma_n",       "class",         "group",          "fnr",
          "clip_factor",   "proportion",    "clean_loss",     "clean_stderr",
          "clean_accuracy", "adv_loss",     "adv_accuracy",   "upper_vanishing",
          "upper_generalization", "upper_privacy", "upper_total", "lower_total",
          "adv_bound_total", "manifest"};
}

void append_report_rows(CsvWriter& csv, const GroupReport& report,
                        const std::string& manifest_ref) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const CellReport& cr : report.cells) {
    csv.row(report.noise_std, to_string(cr.cell.label), to_string(cr.cell.group), cr.fnr,
            cr.clip_factor, cr.proportion, cr.clean ? cr.clean->loss : nan,
            cr.clean ? cr.clean->stderr_loss : nan, cr.clean ? cr.clean->accuracy : nan,
            cr.adversarial ? cr.adversarial->loss : nan,
            cr.adversarial ? cr.adversarial->accuracy : nan, cr.upper.vanishing,
            cr.upper.generalization, cr.upper.privacy, cr.upper.total(), cr.lower.total(),
            cr.adversarial_bound ? cr.adversarial_bound->total() : nan, manifest_ref);
  }
}

}  // namespace dpfl
