#include "dpfl/network.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace dpfl {
namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void ModelParams::validate() const {
  if (weights.rows() % 2 != 0) throw std::invalid_argument("weights must have 2m rows");
  if (frozen.rows() != weights.rows() || frozen.cols() != weights.cols()) {
    throw std::invalid_argument("frozen mask shape does not match weights");
  }
  if (!weights.allFinite()) throw std::invalid_argument("weights contain non-finite entries");
}

ModelParams init_params(const ModelConfig& cfg) {
  if (cfg.neurons < 1 || cfg.dim < 1) throw ConfigError("model needs m >= 1 and d >= 1");
  if (!(cfg.init_std >= 0.0)) throw ConfigError("init_std must be nonnegative");
  ModelParams params(cfg.neurons, cfg.dim);
  Rng rng(cfg.seed);
  fill_gaussian(params.weights, cfg.init_std, rng);
  return params;
}

ModelParams init_pretrained(const SimpleBank& bank, double c1, double c3, double sigma_p,
                            int neurons, Rng& rng) {
  if (neurons < 1) throw ConfigError("model needs m >= 1");
  if (!(c1 >= 0.0 && c3 >= 0.0)) throw ConfigError("pretrained coefficients must be nonnegative");
  ModelParams params(neurons, bank.dim());
  for (Label y : {Label::one, Label::two}) {
    for (int r = 0; r < neurons; ++r) {
      const Eigen::VectorXd xi = bank.sample_noise_patch(sigma_p, rng);
      auto row = params.weights.row(index_of(y) * neurons + r);
      row = c1 * bank.feature(y).transpose();
      if (c3 != 0.0) row += c3 * xi.transpose();
    }
  }
  return params;
}

double mean_loss(const ModelParams& params, const Dataset& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const Sample& s : data.samples) total += loss(params.weights, s.patches, s.label);
  return total / static_cast<double>(data.size());
}

double accuracy(const ModelParams& params, const Dataset& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const Sample& s : data.samples) total += correctness(params.weights, s.patches, s.label);
  return total / static_cast<double>(data.size());
}

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  params.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write("DPFW", 4);
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.neurons()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.dim()));
  for (Eigen::Index i = 0; i < params.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.weights.cols(); ++j) {
      detail::write_le<double>(out, params.weights(i, j));
    }
  }
  std::uint8_t byte = 0;
  int bit = 0;
  for (Eigen::Index i = 0; i < params.frozen.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.frozen.cols(); ++j) {
      if (params.frozen(i, j)) byte |= static_cast<std::uint8_t>(1u << bit);
      if (++bit == 8) {
        detail::write_le<std::uint8_t>(out, byte);
        byte = 0;
        bit = 0;
      }
    }
  }
  if (bit != 0) detail::write_le<std::uint8_t>(out, byte);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  detail::expect_magic(in, "DPFW", path.string());
  if (detail::read_le<std::uint32_t>(in) != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  const auto m = static_cast<int>(detail::read_le<std::uint32_t>(in));
  const auto d = static_cast<int>(detail::read_le<std::uint32_t>(in));
  ModelParams params(m, d);
  for (Eigen::Index i = 0; i < params.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.weights.cols(); ++j) {
      params.weights(i, j) = detail::read_le<double>(in);
    }
  }
  std::uint8_t byte = 0;
  int bit = 8;
  for (Eigen::Index i = 0; i < params.frozen.rows(); ++i) {
    for (Eigen::Index j = 0; j < params.frozen.cols(); ++j) {
      if (bit == 8) {
        byte = detail::read_le<std::uint8_t>(in);
        bit = 0;
      }
      params.frozen(i, j) = ((byte >> bit) & 1u) != 0;
      ++bit;
    }
  }
  params.validate();
  return params;
}

}  // namespace dpfl
