#include "dpfl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"

namespace dpfl {
namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr int kMaxOrthonormalizeAttempts = 16;

bool coin(double p, Rng& rng) { return std::bernoulli_distribution(p)(rng); }

int draw_slot(Rng& rng) { return coin(0.5, rng) ? 1 : 2; }

Sample assemble(Eigen::Ref<const Eigen::VectorXd> feature, Eigen::VectorXd noise, Label y, Group g,
                int slot) {
  Sample s;
  s.patches.resize(feature.size(), 2);
  s.patches.col(slot - 1) = feature;
  s.patches.col(2 - slot) = std::move(noise);
  s.label = y;
  s.group = g;
  s.feature_slot = slot;
  return s;
}

}  // namespace

FeatureBank::FeatureBank(Eigen::Matrix<double, Eigen::Dynamic, 4> features)
    : features_(std::move(features)), directions_(features_.rows(), 4) {
  for (int c = 0; c < 4; ++c) {
    norms_[c] = features_.col(c).norm();
    if (norms_[c] > 0.0) {
      directions_.col(c) = features_.col(c) / norms_[c];
    } else {
      directions_.col(c).setZero();
    }
  }
}

double FeatureBank::max_norm() const { return *std::max_element(norms_.begin(), norms_.end()); }

void FeatureBank::project_out(Eigen::Ref<Eigen::VectorXd> v) const {
  // Directions are orthonormal, so removing them one at a time is exact.
  for (int c = 0; c < 4; ++c) {
    v -= directions_.col(c).dot(v) * directions_.col(c);
  }
}

FeatureBank make_feature_bank(int dim, const std::array<double, 4>& norms, std::uint64_t seed) {
  if (dim < 4) throw ConfigError("feature bank needs d >= 4 to host four orthogonal features");
  for (double n : norms) {
    if (!(n > 0.0)) throw ConfigError("feature norms must be positive");
  }
  Rng rng(seed);
  for (int attempt = 0; attempt < kMaxOrthonormalizeAttempts; ++attempt) {
    Eigen::Matrix<double, Eigen::Dynamic, 4> draws(dim, 4);
    fill_gaussian(draws, 1.0, rng);
    Eigen::HouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 4>> qr(draws);
    const auto& r = qr.matrixQR();
    bool degenerate = false;
    for (int c = 0; c < 4; ++c) {
      if (std::abs(r(c, c)) <= 1e-8 * draws.col(c).norm()) degenerate = true;
    }
    if (degenerate) continue;
    Eigen::Matrix<double, Eigen::Dynamic, 4> q =
        qr.householderQ() * Eigen::MatrixXd::Identity(dim, 4);
    for (int c = 0; c < 4; ++c) q.col(c) *= norms[c];
    return FeatureBank(std::move(q));
  }
  throw std::runtime_error("feature orthonormalization failed after 16 attempts");
}

void DataSpec::validate() const {
  if (!(p_class > 0.0 && p_class < 1.0)) throw ConfigError("p_c must lie in (0, 1)");
  if (!(p_majority > 0.5 && p_majority < 1.0)) throw ConfigError("p_f must lie in (0.5, 1)");
  if (!(sigma_p > 0.0)) throw ConfigError("sigma_p must be positive");
  for (Label y : {Label::one, Label::two}) {
    const double maj = bank.norm({y, Group::majority});
    const double min = bank.norm({y, Group::minority});
    if (!(p_majority * maj > (1.0 - p_majority) * min)) {
      throw ConfigError("majority feature of class " + to_string(y) +
                        " does not dominate: need p_f |u_maj| > (1 - p_f) |u_min|");
    }
  }
}

double DataSpec::proportion(Cell c) const {
  const double pc = c.label == Label::one ? p_class : 1.0 - p_class;
  const double pf = c.group == Group::majority ? p_majority : 1.0 - p_majority;
  return pc * pf;
}

Eigen::VectorXd sample_noise_patch(const DataSpec& spec, Rng& rng) {
  Eigen::VectorXd g(spec.bank.dim());
  fill_gaussian(g, spec.sigma_p, rng);
  spec.bank.project_out(g);
  return g;
}

Sample draw_sample(const DataSpec& spec, Rng& rng) {
  const Label y = coin(spec.p_class, rng) ? Label::one : Label::two;
  const Group g = coin(spec.p_majority, rng) ? Group::majority : Group::minority;
  const int slot = draw_slot(rng);
  return assemble(spec.bank.feature({y, g}), sample_noise_patch(spec, rng), y, g, slot);
}

Sample draw_conditional(const DataSpec& spec, Cell cell, Rng& rng) {
  const int slot = draw_slot(rng);
  return assemble(spec.bank.feature(cell), sample_noise_patch(spec, rng), cell.label, cell.group,
                  slot);
}

Dataset generate_dataset(const DataSpec& spec, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  data.dim = spec.bank.dim();
  data.seed = seed;
  data.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) data.samples.push_back(draw_sample(spec, rng));
  return data;
}

SimpleBank::SimpleBank(Eigen::VectorXd u1, Eigen::VectorXd u2, double theta)
    : u1_(std::move(u1)), u2_(std::move(u2)), theta_(theta) {
  if (u1_.size() != u2_.size()) throw ConfigError("simple bank features differ in dimension");
}

void SimpleBank::project_out(Eigen::Ref<Eigen::VectorXd> v) const {
  for (const Eigen::VectorXd* u : {&u1_, &u2_}) {
    const double sq = u->squaredNorm();
    if (sq > 0.0) v -= (u->dot(v) / sq) * (*u);
  }
}

Eigen::VectorXd SimpleBank::sample_noise_patch(double sigma_p, Rng& rng) const {
  Eigen::VectorXd g(dim());
  fill_gaussian(g, sigma_p, rng);
  project_out(g);
  return g;
}

Sample SimpleBank::draw(double sigma_p, Rng& rng) const {
  const Label y = coin(0.5, rng) ? Label::one : Label::two;
  const int slot = draw_slot(rng);
  return assemble(feature(y), sample_noise_patch(sigma_p, rng), y, Group::majority, slot);
}

Sample SimpleBank::draw_conditional(Label y, double sigma_p, Rng& rng) const {
  const int slot = draw_slot(rng);
  return assemble(feature(y), sample_noise_patch(sigma_p, rng), y, Group::majority, slot);
}

std::pair<SimpleBank, SimpleBank> make_simple_banks(int dim, double feature_norm, double theta,
                                                    std::uint64_t seed) {
  if (dim < 2) throw ConfigError("simple banks need d >= 2");
  if (!(theta >= 0.0 && theta <= std::acos(-1.0) / 2.0)) {
    throw ConfigError("rotation angle must lie in [0, pi/2]");
  }
  if (!(feature_norm >= 0.0)) throw ConfigError("feature norm must be nonnegative");
  Rng rng(seed);
  Eigen::MatrixXd basis;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxOrthonormalizeAttempts) {
      throw std::runtime_error("feature orthonormalization failed after 16 attempts");
    }
    Eigen::MatrixXd draws(dim, 2);
    fill_gaussian(draws, 1.0, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(draws);
    const auto& r = qr.matrixQR();
    if (std::abs(r(0, 0)) <= 1e-8 * draws.col(0).norm() ||
        std::abs(r(1, 1)) <= 1e-8 * draws.col(1).norm()) {
      continue;
    }
    basis = qr.householderQ() * Eigen::MatrixXd::Identity(dim, 2);
    break;
  }
  Eigen::VectorXd u1 = feature_norm * basis.col(0);
  Eigen::VectorXd u2 = feature_norm * basis.col(1);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Eigen::VectorXd v1 = c * u1 + s * u2;
  Eigen::VectorXd v2 = c * u2 - s * u1;
  if (theta == 0.0) {
    v1 = u1;
    v2 = u2;
  }
  return {SimpleBank(u1, u2, 0.0), SimpleBank(std::move(v1), std::move(v2), theta)};
}

Dataset generate_dataset(const SimpleBank& bank, double sigma_p, std::size_t n,
                         std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  data.dim = bank.dim();
  data.seed = seed;
  data.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) data.samples.push_back(bank.draw(sigma_p, rng));
  return data;
}

Dataset generate_balanced(const SimpleBank& bank, double sigma_p, std::size_t per_class,
                          std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  data.dim = bank.dim();
  data.seed = seed;
  data.samples.reserve(2 * per_class);
  for (Label y : {Label::one, Label::two}) {
    for (std::size_t i = 0; i < per_class; ++i) {
      data.samples.push_back(bank.draw_conditional(y, sigma_p, rng));
    }
  }
  return data;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write("DPFL", 4);
  detail::write_le<std::uint32_t>(out, kDatasetVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim));
  detail::write_le<std::uint64_t>(out, data.samples.size());
  detail::write_le<std::uint64_t>(out, data.seed);
  for (const Sample& s : data.samples) {
    if (s.patches.rows() != data.dim) throw std::runtime_error("sample dimension mismatch");
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.label));
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.group));
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.feature_slot));
    for (int p = 0; p < 2; ++p) {
      for (int i = 0; i < data.dim; ++i) detail::write_le<double>(out, s.patches(i, p));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  detail::expect_magic(in, "DPFL", path.string());
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kDatasetVersion) throw std::runtime_error("unsupported dataset version");
  Dataset data;
  data.dim = static_cast<int>(detail::read_le<std::uint32_t>(in));
  const auto n = detail::read_le<std::uint64_t>(in);
  data.seed = detail::read_le<std::uint64_t>(in);
  data.samples.resize(n);
  for (Sample& s : data.samples) {
    const auto label = detail::read_le<std::uint8_t>(in);
    const auto group = detail::read_le<std::uint8_t>(in);
    const auto slot = detail::read_le<std::uint8_t>(in);
    if ((label != 1 && label != 2) || group > 1 || (slot != 1 && slot != 2)) {
      throw std::runtime_error("corrupt sample record in " + path.string());
    }
    s.label = static_cast<Label>(label);
    s.group = static_cast<Group>(group);
    s.feature_slot = slot;
    s.patches.resize(data.dim, 2);
    for (int p = 0; p < 2; ++p) {
      for (int i = 0; i < data.dim; ++i) s.patches(i, p) = detail::read_le<double>(in);
    }
  }
  return data;
}

}  // namespace dpfl
