#pragma once

// Shared fixtures for the unit tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "dpfl/datagen.hpp"
#include "dpfl/network.hpp"

namespace dpfl::testing {

inline DataSpec default_spec(std::uint64_t seed = 7, double sigma_p = 0.2, int dim = 100) {
  return DataSpec{2.0 / 3.0, 2.0 / 3.0, sigma_p, make_feature_bank(dim, {4.0, 2.0, 1.5, 0.5}, seed)};
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                                     double scale = 1.0) {
  Eigen::MatrixXd out(rows, cols);
  fill_gaussian(out, scale, rng);
  return out;
}

inline Input random_input(int dim, Rng& rng) {
  Input x(dim, 2);
  fill_gaussian(x, 1.0, rng);
  return x;
}

/// Smallest |<w_{k,r}, x^(j)>| over all neurons and patches.
inline double kink_distance(const Eigen::MatrixXd& w, const Input& x) {
  return (w * x).cwiseAbs().minCoeff();
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("dpfl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace dpfl::testing
