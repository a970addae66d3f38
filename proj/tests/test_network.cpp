#include <doctest.h>

#include <cmath>

#include "dpfl/network.hpp"
#include "support.hpp"

using namespace dpfl;
using dpfl::testing::kink_distance;
using dpfl::testing::random_input;
using dpfl::testing::random_matrix;

namespace {

// Central differences of the loss in every weight coordinate, computed in
// long double so the oracle's rounding stays well below the tolerance.
Eigen::MatrixXd finite_difference_gradient(const Eigen::MatrixXd& w, const Input& x, Label y,
                                           double step) {
  using LD = long double;
  const Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic> wl = w.cast<LD>();
  const InputT<LD> xl = x.cast<LD>();
  Eigen::MatrixXd g(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      auto plus = wl, minus = wl;
      plus(i, j) += step;
      minus(i, j) -= step;
      g(i, j) = static_cast<double>((loss(plus, xl, y) - loss(minus, xl, y)) / (2 * LD(step)));
    }
  }
  return g;
}

}  // namespace

TEST_CASE("zero weights give zero outputs and loss ln 2") {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Zero(8, 5);
  Rng rng(1);
  const Input x = random_input(5, rng);
  CHECK(outputs(w, x).isZero(0.0));
  CHECK(loss(w, x, Label::one) == doctest::Approx(std::log(2.0)));
  CHECK(loss(w, x, Label::two) == doctest::Approx(std::log(2.0)));
  CHECK(correctness(w, x, Label::two) == 0.5);
}

TEST_CASE("single neuron identity") {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(6);
  u(2) = 1.0;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 6);
  w.row(0) = u.transpose();
  w(1, 2) = 0.25;
  Input x = Input::Zero(6, 2);
  x.col(0) = u;
  const Eigen::Vector2d f = outputs(w, x);
  CHECK(f(0) == 1.0);
  CHECK(f(1) == 0.25);
}

TEST_CASE("forward pass is invariant to swapping patches") {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXd w = random_matrix(6, 7, rng);
    const Input x = random_input(7, rng);
    Input swapped(7, 2);
    swapped.col(0) = x.col(1);
    swapped.col(1) = x.col(0);
    CHECK((outputs(w, x) - outputs(w, swapped)).norm() < 1e-14);
    CHECK(loss(w, x, Label::one) == doctest::Approx(loss(w, swapped, Label::one)).epsilon(1e-14));
  }
}

TEST_CASE("forward pass is positively homogeneous in W") {
  Rng rng(3);
  const Eigen::MatrixXd w = random_matrix(8, 10, rng);
  const Input x = random_input(10, rng);
  for (double c : {0.0, 0.5, 2.0, 7.0}) {
    CHECK((outputs((c * w).eval(), x) - c * outputs(w, x)).norm() < 1e-12);
  }
}

TEST_CASE("probabilities and loss are well formed") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const Eigen::MatrixXd w = random_matrix(4, 5, rng, 3.0);
    const Input x = random_input(5, rng);
    const Eigen::Vector2d p = probabilities(w, x);
    CHECK(p(0) > 0.0);
    CHECK(p(0) < 1.0);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    CHECK(loss(w, x, Label::one) >= 0.0);
    CHECK(loss(w, x, Label::two) >= 0.0);
  }
}

TEST_CASE("softmax and softplus edge values") {
  CHECK(softmax<double>(Eigen::Vector2d(3.0, 3.0))(0) == 0.5);
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  // -log sigmoid(20)
  CHECK(softplus(-20.0) == doctest::Approx(2.0611536181902037e-9).epsilon(1e-12));
  CHECK(std::isfinite(softplus(1000.0)));
  CHECK(softplus(1000.0) == 1000.0);
  CHECK(softmax<double>(Eigen::Vector2d(1000.0, 0.0))(1) >= 0.0);
}

TEST_CASE("saturated softmax or dead neurons give zero gradient") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 3);
  w(0, 0) = 2000.0;
  Input x = Input::Zero(3, 2);
  x(0, 0) = 1.0;
  CHECK(gradient(w, x, Label::one).isZero(0.0));

  Rng rng(5);
  const Eigen::MatrixXd v = -random_matrix(4, 3, rng).cwiseAbs();
  const Input pos = random_input(3, rng).cwiseAbs();
  CHECK(gradient(v, pos, Label::two).isZero(0.0));
}

TEST_CASE("analytic gradient matches finite differences away from kinks") {
  Rng rng(6);
  int checked = 0;
  while (checked < 120) {
    std::uniform_int_distribution<int> dim_pick(4, 16), m_pick(2, 8);
    const int d = dim_pick(rng), m = m_pick(rng);
    const Eigen::MatrixXd w = random_matrix(2 * m, d, rng);
    const Input x = random_input(d, rng);
    if (kink_distance(w, x) <= 1e-3) continue;
    const Label y = checked % 2 == 0 ? Label::one : Label::two;
    const Eigen::MatrixXd analytic = gradient(w, x, y);
    const Eigen::MatrixXd numeric = finite_difference_gradient(w, x, y, 1e-6);
    const double rel = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
    CHECK(rel < 1e-4);
    ++checked;
  }
}

TEST_CASE("input gradient matches finite differences") {
  Rng rng(7);
  const Eigen::MatrixXd w = random_matrix(6, 5, rng);
  Input x = random_input(5, rng);
  REQUIRE(kink_distance(w, x) > 1e-3);
  const Input g = input_gradient(w, x, Label::one);
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      Input plus = x, minus = x;
      plus(i, j) += 1e-6;
      minus(i, j) -= 1e-6;
      const double fd = (loss(w, plus, Label::one) - loss(w, minus, Label::one)) / 2e-6;
      CHECK(g(i, j) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("kink convention counts a zero pre-activation as active") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 2);
  Input x = Input::Zero(2, 2);
  x(0, 0) = 1.0;
  // <w, x> = 0 everywhere; with sigma'(0) = 1 the gradient is nonzero.
  const Eigen::MatrixXd g = gradient(w, x, Label::one);
  CHECK(g(0, 0) == doctest::Approx(-0.5));
  CHECK(g(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("initialization") {
  SUBCASE("zero scale gives zero weights") {
    const ModelParams p = init_params({32, 100, 0.0, 1});
    CHECK(p.weights.isZero(0.0));
    CHECK(p.frozen_count() == 0);
  }
  SUBCASE("entry variance matches init_std squared") {
    const ModelParams p = init_params({32, 100, 0.01, 2});
    const double mean = p.weights.mean();
    const double var = (p.weights.array() - mean).square().sum() / (p.size() - 1);
    CHECK(var == doctest::Approx(1e-4).epsilon(0.1));
  }
  SUBCASE("same seed, same weights") {
    const ModelParams a = init_params({4, 9, 0.3, 17});
    const ModelParams b = init_params({4, 9, 0.3, 17});
    CHECK((a.weights.array() == b.weights.array()).all());
  }
}

TEST_CASE("pretrained construction") {
  const auto [pre, fine] = make_simple_banks(30, 1.0, 0.0, 3);
  Rng rng(4);
  SUBCASE("without noise every neuron equals C1 u_j") {
    const ModelParams p = init_pretrained(pre, 1.5, 0.0, 0.2, 4, rng);
    for (int r = 0; r < 4; ++r) {
      CHECK((p.weights.row(r).transpose() - 1.5 * pre.feature(Label::one)).isZero(0.0));
      CHECK((p.weights.row(4 + r).transpose() - 1.5 * pre.feature(Label::two)).isZero(0.0));
      CHECK(p.weights.row(r).dot(pre.feature(Label::one)) / 1.5 == doctest::Approx(1.0));
    }
  }
  SUBCASE("noise is orthogonal to the features") {
    const ModelParams p = init_pretrained(pre, 1.0, 1.0, 0.5, 8, rng);
    for (int r = 0; r < 8; ++r) {
      CHECK(p.weights.row(r).dot(pre.feature(Label::one)) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("dataset accuracy and loss") {
  const DataSpec spec = dpfl::testing::default_spec();
  const Cell cell{Label::one, Group::majority};
  ModelParams p(1, 100);
  p.weights.row(0) = spec.bank.feature(cell).transpose();
  Rng rng(8);
  Dataset data;
  for (int i = 0; i < 200; ++i) data.samples.push_back(draw_conditional(spec, cell, rng));
  CHECK(accuracy(p, data) == 1.0);
  CHECK(mean_loss(p, data) < std::log(2.0));
  CHECK(accuracy(ModelParams(3, 100), data) == 0.5);
}

TEST_CASE("checkpoint round-trips weights and mask") {
  ModelParams p = init_params({3, 7, 0.2, 9});
  p.frozen(1, 2) = true;
  p.frozen(5, 6) = true;
  const auto path = dpfl::testing::scratch_dir("ckpt") / "w.bin";
  write_checkpoint(path, p);
  const ModelParams q = read_checkpoint(path);
  CHECK((p.weights.array() == q.weights.array()).all());
  CHECK((p.frozen == q.frozen).all());
}

TEST_CASE("dimension mismatch throws") {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 5);
  const Input x = Input::Zero(6, 2);
  CHECK_THROWS_AS(outputs(w, x), std::invalid_argument);
  CHECK_THROWS_AS(gradient(w, x, Label::one), std::invalid_argument);
}
