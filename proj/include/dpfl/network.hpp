#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>

#include "dpfl/common.hpp"
#include "dpfl/datagen.hpp"

namespace dpfl {

using FrozenMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// First-layer weights of the two-layer CNN. Row (k-1)*m + r holds w_{k,r};
/// the second layer is the constant 1/m and is not stored.
struct ModelParams {
  Eigen::MatrixXd weights;
  FrozenMask frozen;

  ModelParams() = default;
  ModelParams(int neurons, int dim)
      : weights(Eigen::MatrixXd::Zero(2 * neurons, dim)),
        frozen(FrozenMask::Constant(2 * neurons, dim, false)) {}

  int neurons() const { return static_cast<int>(weights.rows() / 2); }
  int dim() const { return static_cast<int>(weights.cols()); }
  Eigen::Index size() const { return weights.size(); }
  Eigen::Index frozen_count() const { return frozen.count(); }

  /// Throws if the mask shape disagrees with the weights or any entry is non-finite.
  void validate() const;
};

struct ModelConfig {
  int neurons = 32;
  int dim = 100;
  double init_std = 0.01;
  std::uint64_t seed = 0;
};

/// Every entry i.i.d. N(0, init_std^2), nothing frozen.
ModelParams init_params(const ModelConfig& cfg);

/// Head j, neuron r: C_1 u_j + C_3 xi_r with xi_r an independent projected
/// Gaussian draw at scale sigma_p under the bank's projector.
ModelParams init_pretrained(const SimpleBank& bank, double c1, double c3, double sigma_p,
                            int neurons, Rng& rng);

/// Two-class softmax with max subtraction.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> softmax(const Eigen::Matrix<Scalar, 2, 1>& logits) {
  using std::exp;
  const Scalar top = logits.maxCoeff();
  Eigen::Matrix<Scalar, 2, 1> e(exp(logits(0) - top), exp(logits(1) - top));
  return e / e.sum();
}

/// log(1 + e^z) without overflow or cancellation.
template <typename Scalar>
Scalar softplus(Scalar z) {
  using std::exp;
  using std::log1p;
  return z > Scalar(0) ? z + log1p(exp(-z)) : log1p(exp(z));
}

namespace detail {

/// Pre-activations are (2m x 2): row (k-1)*m + r, column j holds <w_{k,r}, x^(j)>.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 2, 1> outputs_from_preactivations(
    const Eigen::MatrixBase<Derived>& pre) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = pre.rows() / 2;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> activations =
      pre.array().max(Scalar(0)).rowwise().sum().matrix();
  const Scalar scale = Scalar(1) / Scalar(m);
  return {scale * activations.head(m).sum(), scale * activations.tail(m).sum()};
}

}  // namespace detail

/// (F_1, F_2) with F_k = (1/m) sum_r sum_j ReLU(<w_{k,r}, x^(j)>).
template <typename WDerived, typename XDerived>
Eigen::Matrix<typename WDerived::Scalar, 2, 1> outputs(const Eigen::MatrixBase<WDerived>& w,
                                                       const Eigen::MatrixBase<XDerived>& x) {
  using Scalar = typename WDerived::Scalar;
  static_assert(std::is_same_v<Scalar, typename XDerived::Scalar>);
  if (w.cols() != x.rows() || x.cols() != 2 || w.rows() % 2 != 0) {
    throw std::invalid_argument("outputs: weight/input dimension mismatch");
  }
  return detail::outputs_from_preactivations((w * x).eval());
}

template <typename WDerived, typename XDerived>
Eigen::Matrix<typename WDerived::Scalar, 2, 1> probabilities(const Eigen::MatrixBase<WDerived>& w,
                                                             const Eigen::MatrixBase<XDerived>& x) {
  return softmax(outputs(w, x));
}

/// Cross-entropy -log prob_y, evaluated as softplus(F_{3-y} - F_y).
template <typename WDerived, typename XDerived>
typename WDerived::Scalar loss(const Eigen::MatrixBase<WDerived>& w,
                               const Eigen::MatrixBase<XDerived>& x, Label y) {
  const auto f = outputs(w, x);
  const int yi = index_of(y);
  return softplus(f(1 - yi) - f(yi));
}

namespace detail {

/// Per-row coefficient (prob_k - 1[k = y]) / m and the activation pattern
/// 1[<w_{k,r}, x^(j)> >= 0] (sigma'(0) = 1).
template <typename WDerived, typename XDerived>
auto backprop_terms(const Eigen::MatrixBase<WDerived>& w, const Eigen::MatrixBase<XDerived>& x,
                    Label y) {
  using Scalar = typename WDerived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index m = w.rows() / 2;
  if (w.cols() != x.rows() || x.cols() != 2 || w.rows() % 2 != 0) {
    throw std::invalid_argument("gradient: weight/input dimension mismatch");
  }
  const Matrix pre = w * x;
  const auto f = outputs_from_preactivations(pre);
  const auto prob = softmax<Scalar>(f);
  const int yi = index_of(y);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coeff(2 * m);
  for (int k = 0; k < 2; ++k) {
    const Scalar target = k == yi ? Scalar(1) : Scalar(0);
    coeff.segment(k * m, m).setConstant((prob(k) - target) / Scalar(m));
  }
  Matrix scaled = (pre.array() >= Scalar(0)).template cast<Scalar>().matrix();
  scaled.array().colwise() *= coeff.array();
  return scaled;
}

}  // namespace detail

/// Closed-form per-sample gradient of the loss with respect to W.
template <typename WDerived, typename XDerived>
Eigen::Matrix<typename WDerived::Scalar, Eigen::Dynamic, Eigen::Dynamic> gradient(
    const Eigen::MatrixBase<WDerived>& w, const Eigen::MatrixBase<XDerived>& x, Label y) {
  return detail::backprop_terms(w, x, y) * x.transpose();
}

/// Gradient of the loss with respect to the input patches (d x 2).
template <typename WDerived, typename XDerived>
InputT<typename WDerived::Scalar> input_gradient(const Eigen::MatrixBase<WDerived>& w,
                                                 const Eigen::MatrixBase<XDerived>& x, Label y) {
  return w.transpose() * detail::backprop_terms(w, x, y);
}

/// Predicted label; ties resolve to class 1 (callers scoring ties use outputs()).
template <typename WDerived, typename XDerived>
Label predict(const Eigen::MatrixBase<WDerived>& w, const Eigen::MatrixBase<XDerived>& x) {
  const auto f = outputs(w, x);
  return f(1) > f(0) ? Label::two : Label::one;
}

/// 1 for a correct strict prediction, 0.5 for a tie, 0 otherwise.
template <typename WDerived, typename XDerived>
double correctness(const Eigen::MatrixBase<WDerived>& w, const Eigen::MatrixBase<XDerived>& x,
                   Label y) {
  const auto f = outputs(w, x);
  const int yi = index_of(y);
  if (f(yi) > f(1 - yi)) return 1.0;
  if (f(yi) == f(1 - yi)) return 0.5;
  return 0.0;
}

/// Mean loss over a dataset.
double mean_loss(const ModelParams& params, const Dataset& data);
/// Mean correctness over a dataset (ties count 0.5).
double accuracy(const ModelParams& params, const Dataset& data);

/// Checkpoint: "DPFW", version u32, m u32, d u32, row-major float64 weights,
/// then the frozen mask in row-major order packed LSB-first.
void write_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint(const std::filesystem::path& path);

}  // namespace dpfl
