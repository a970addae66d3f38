#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "dpfl/common.hpp"

namespace dpfl {

/// Four mutually orthogonal feature vectors u_{i,j}, one per cell.
class FeatureBank {
 public:
  /// `features` is d x 4 with column c holding the feature of Cell::from_index(c).
  explicit FeatureBank(Eigen::Matrix<double, Eigen::Dynamic, 4> features);

  int dim() const { return static_cast<int>(features_.rows()); }
  Eigen::Ref<const Eigen::VectorXd> feature(Cell c) const { return features_.col(c.index()); }
  double norm(Cell c) const { return norms_[static_cast<std::size_t>(c.index())]; }
  const std::array<double, 4>& norms() const { return norms_; }
  double max_norm() const;
  const Eigen::Matrix<double, Eigen::Dynamic, 4>& matrix() const { return features_; }

  /// Applies H = I - sum u u^T / |u|^2 in place.
  void project_out(Eigen::Ref<Eigen::VectorXd> v) const;

 private:
  Eigen::Matrix<double, Eigen::Dynamic, 4> features_;
  Eigen::Matrix<double, Eigen::Dynamic, 4> directions_;
  std::array<double, 4> norms_{};
};

/// Orthonormalizes independent Gaussian draws and scales them to `norms`
/// (indexed like Cell::index()). Retries degenerate draws up to 16 times.
FeatureBank make_feature_bank(int dim, const std::array<double, 4>& norms, std::uint64_t seed);

struct DataSpec {
  double p_class = 0.5;     // P[y = 1]
  double p_majority = 0.5;  // P[feature from the majority group]
  double sigma_p = 1.0;     // noise-patch standard deviation
  FeatureBank bank;

  /// Throws ConfigError unless 0 < p_class < 1, 0.5 < p_majority < 1,
  /// sigma_p > 0 and p_f |u_{i,maj}| > (1 - p_f) |u_{i,min}| for both classes.
  void validate() const;
  /// Mixture weight of a cell: products of p_class and p_majority.
  double proportion(Cell c) const;
};

struct Sample {
  Input patches;  // d x 2
  Label label = Label::one;
  Group group = Group::majority;
  int feature_slot = 1;  // 1 or 2

  Eigen::Ref<const Eigen::VectorXd> feature_patch() const { return patches.col(feature_slot - 1); }
  Eigen::Ref<const Eigen::VectorXd> noise_patch() const { return patches.col(2 - feature_slot); }
};

struct Dataset {
  std::vector<Sample> samples;
  int dim = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// xi = g - sum_{i,j} <g,u_{i,j}>/|u_{i,j}|^2 u_{i,j} with g ~ N(0, sigma_p^2 I).
Eigen::VectorXd sample_noise_patch(const DataSpec& spec, Rng& rng);
Sample draw_sample(const DataSpec& spec, Rng& rng);
Sample draw_conditional(const DataSpec& spec, Cell cell, Rng& rng);
Dataset generate_dataset(const DataSpec& spec, std::size_t n, std::uint64_t seed);

/// Two-feature bank of the pretrain/finetune distributions. Both classes are
/// equally likely; the noise patch is projected orthogonal to u_1 and u_2.
class SimpleBank {
 public:
  SimpleBank(Eigen::VectorXd u1, Eigen::VectorXd u2, double theta);

  int dim() const { return static_cast<int>(u1_.size()); }
  double theta() const { return theta_; }
  const Eigen::VectorXd& feature(Label y) const { return y == Label::one ? u1_ : u2_; }
  double norm(Label y) const { return feature(y).norm(); }

  /// Features of zero norm are skipped by the projector.
  void project_out(Eigen::Ref<Eigen::VectorXd> v) const;
  Eigen::VectorXd sample_noise_patch(double sigma_p, Rng& rng) const;
  Sample draw(double sigma_p, Rng& rng) const;
  Sample draw_conditional(Label y, double sigma_p, Rng& rng) const;

 private:
  Eigen::VectorXd u1_;
  Eigen::VectorXd u2_;
  double theta_ = 0.0;
};

/// Pretrain bank (orthogonal u_1, u_2 of norm `feature_norm`) and the finetune
/// bank holding u'_1 = cos(t) u_1 + sin(t) u_2, u'_2 = cos(t) u_2 - sin(t) u_1.
std::pair<SimpleBank, SimpleBank> make_simple_banks(int dim, double feature_norm, double theta,
                                                    std::uint64_t seed);

/// n i.i.d. draws from a simple-bank distribution.
Dataset generate_dataset(const SimpleBank& bank, double sigma_p, std::size_t n, std::uint64_t seed);
/// Exactly `per_class` samples of each class, class 1 first.
Dataset generate_balanced(const SimpleBank& bank, double sigma_p, std::size_t per_class,
                          std::uint64_t seed);

/// Little-endian dump: "DPFL", version u32, d u32, n u64, seed u64, then per
/// sample label u8, group u8, feature_slot u8, patch1 and patch2 as float64.
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace dpfl
