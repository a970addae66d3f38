#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace dpfl {

/// Streaming mean and variance (Welford).
class RunningStats {
 public:
  void add(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
  }

  std::int64_t count() const { return count_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance; zero for fewer than two observations.
  double variance() const { return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0; }
  double standard_error() const {
    return count_ > 0 ? std::sqrt(variance() / static_cast<double>(count_)) : 0.0;
  }

 private:
  std::int64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation (Pearson correlation of average ranks). Returns 0
/// when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// One-sided p-value for H1: rho > 0, using the t approximation with n - 2
/// degrees of freedom.
double spearman_p_greater(double rho, std::size_t n);
/// One-sided p-value for H1: rho < 0.
double spearman_p_less(double rho, std::size_t n);

/// Exact two-sided binomial test p-value for k successes in n trials.
double binomial_two_sided_p(std::int64_t k, std::int64_t n, double p);

/// Pearson chi-square goodness-of-fit p-value.
double chi_square_p(std::span<const std::int64_t> observed, std::span<const double> probabilities);

}  // namespace dpfl
