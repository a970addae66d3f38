#pragma once

// Bound "shape" evaluations. Every hidden constant of the asymptotic test-loss
// bounds is set to 1 and logarithmic factors are dropped, so the values are
// meaningful only for monotonicity and ordering comparisons.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpfl/attacks.hpp"
#include "dpfl/csv.hpp"
#include "dpfl/common.hpp"
#include "dpfl/datagen.hpp"
#include "dpfl/dp_optimizer.hpp"
#include "dpfl/network.hpp"

namespace dpfl {

/// Per-cell feature-to-noise ratio, clipping factor and mixture proportion.
struct CellQuantities {
  std::array<double, 4> fnr{};          // |u| / sigma_n, +inf when sigma_n = 0
  std::array<double, 4> clip_factor{};  // C / (|u| + sigma_p sqrt(d)); 1 when clipping is off
  std::array<double, 4> proportion{};
};

CellQuantities cell_quantities(const DataSpec& spec, const DPConfig& cfg);

struct LossEstimate {
  double loss = 0.0;
  double accuracy = 0.0;
  double stderr_loss = 0.0;
};

/// Monte Carlo test loss on fresh draws from D_{i,j}; ties count half-correct.
LossEstimate mc_test_loss(const ModelParams& params, const DataSpec& spec, Cell cell, int n_mc,
                          Rng& rng);
/// Loss, accuracy and standard error over a fixed sample set.
LossEstimate evaluate(const ModelParams& params, const Dataset& data);

struct UpperBound {
  double vanishing = 0.0;
  double generalization = 0.0;
  double privacy = 0.0;
  double total() const { return vanishing + generalization + privacy; }
};

/// exp(-Lambda gamma |u|^2 T / m) L0 + 1/(sqrt(n) gamma Lambda) + m/(Lambda gamma F).
UpperBound upper_bound(Cell cell, int iterations, double init_loss, const DataSpec& spec,
                       const DPConfig& cfg, int neurons, std::size_t n);

struct LowerBound {
  double vanishing = 0.0;
  double privacy = 0.0;
  double generalization = 0.0;  // subtracted
  bool iterations_sufficient = false;
  double total() const { return vanishing + privacy - generalization; }
};

/// exp(-gamma |u|^2 T / m) L0 + d sigma_p^2 / (gamma F^2) - sqrt(1/n) / gamma,
/// plus whether T clears -1 / log(1 - eta min gamma |u|^2 / m).
LowerBound lower_bound(Cell cell, int iterations, double init_loss, const DataSpec& spec,
                       const DPConfig& cfg, int neurons, std::size_t n);

/// Smallest T satisfying the lower bound's iteration requirement.
double lower_bound_min_iterations(const DataSpec& spec, const DPConfig& cfg, int neurons);

struct AdversarialBound {
  double base = 0.0;
  double perturbation = 0.0;
  double total() const { return base + perturbation; }
};

/// base + [T C / m + sqrt(T d) sigma_n / m + sqrt(d) sigma_0] * radius * d^(1 - 1/p).
AdversarialBound adv_bound(double base_upper, int iterations, const DPConfig& cfg, int neurons,
                           int dim, double radius, PerturbationNorm norm, double init_std);

struct MixtureBounds {
  std::array<double, 2> per_class{};  // indexed by index_of(Label)
  std::array<double, 2> per_group{};  // indexed by index_of(Group)
};

/// Proportion-weighted averages of cell bounds, normalized by the class or group mass.
/// A class or group without mass gets NaN.
MixtureBounds mixture_bounds(const std::array<double, 4>& cell_bounds,
                             const std::array<double, 4>& proportions);

/// Initialization loss of the pretrained model on the rotated distribution.
double finetune_L_tilde(double theta, double norm_u1, double norm_u2, double c1, double c3,
                        double sigma_p);

struct FinetuneBound {
  double vanishing = 0.0;
  double generalization = 0.0;
  double privacy = 0.0;
  double total() const { return vanishing + generalization + privacy; }
};

struct FinetuneSetting {
  double theta = 0.0;
  double feature_norm = 1.0;
  double c1 = 1.0;
  double c3 = 1.0;
  double sigma_p = 0.1;
  int dim = 100;
  int neurons = 32;
  std::size_t n = 100;
  int iterations = 1;
  double clip_norm = 1.0;
  double noise_std = 0.0;
};

/// exp(-Lambda |u|^2 T / m) L~ + sqrt(d)/(sqrt(n) Lambda) + m sqrt(d) sigma_n/(Lambda |u|).
FinetuneBound finetune_bound(const FinetuneSetting& s);

/// Multiplier in log(1 + t(e^x - 1)) <= Gamma(x) x: 1 for x >= 0, otherwise
/// log(1 + t(e^-a - 1)) / (-a). Requires t in (0,1], a > 0, x >= -a.
double gamma_fn(double x, double t, double a);

/// eta (C + sqrt(d) sigma_n)(max |u| + sqrt(d) sigma_p), the per-step scale of
/// |Delta_{3-y} - Delta_y|.
double increment_gap_scale(double learning_rate, double clip_norm, int dim, double noise_std,
                           double max_feature_norm, double sigma_p);

/// Tracks per-step changes of the model outputs on a fixed probe set.
class IncrementProbe {
 public:
  struct Step {
    int iteration = 0;
    Eigen::MatrixX2d deltas;  // row p: (Delta_y, Delta_{3-y}) for probe p
  };

  explicit IncrementProbe(std::vector<Sample> probes) : probes_(std::move(probes)) {}
  /// `per_cell` conditional draws from each of the four cells.
  static IncrementProbe sample(const DataSpec& spec, int per_cell, Rng& rng);

  void record(int iteration, const ModelParams& before, const ModelParams& after);

  const std::vector<Sample>& probes() const { return probes_; }
  const std::vector<Step>& steps() const { return steps_; }
  /// Largest |Delta_{3-y} - Delta_y| seen.
  double max_gap() const;
  /// Number of (step, probe) pairs whose gap exceeds `scale`.
  std::size_t violations(double scale) const;
  /// Mean Delta_y and Delta_{3-y} over the probes of one cell at one step.
  std::pair<double, double> cell_mean(std::size_t step, Cell cell) const;

 private:
  std::vector<Sample> probes_;
  std::vector<Step> steps_;
};

struct CellReport {
  Cell cell;
  double fnr = 0.0;
  double clip_factor = 0.0;
  double proportion = 0.0;
  std::optional<LossEstimate> clean;
  std::optional<AdversarialEstimate> adversarial;
  UpperBound upper;
  LowerBound lower;
  std::optional<AdversarialBound> adversarial_bound;
};

struct GroupReport {
  double noise_std = 0.0;
  std::array<CellReport, 4> cells;
  MixtureBounds mixture;
};

struct ReportInputs {
  int iterations = 1;
  int neurons = 32;
  std::size_t n = 1;
  double init_std = 0.0;
  std::array<double, 4> init_loss{};
  std::optional<double> attack_radius;
  PerturbationNorm attack_norm = PerturbationNorm::linf;
};

/// Theory-only report; empirical fields stay empty until filled by the caller.
GroupReport build_report(const DataSpec& spec, const DPConfig& cfg, const ReportInputs& in);

/// Nested by class then group.
nlohmann::json to_json(const GroupReport& report);
/// One row per cell.
std::vector<std::string> report_csv_header();
void append_report_rows(CsvWriter& csv, const GroupReport& report,
                        const std::string& manifest_ref);

}  // namespace dpfl
