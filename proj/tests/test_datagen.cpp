#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dpfl/datagen.hpp"
#include "dpfl/stats.hpp"
#include "support.hpp"

using namespace dpfl;
using dpfl::testing::default_spec;

TEST_CASE("feature bank has the requested norms and is orthogonal") {
  const FeatureBank bank = make_feature_bank(100, {4.0, 2.0, 1.5, 0.5}, 7);
  CHECK(bank.dim() == 100);
  CHECK(bank.norm({Label::one, Group::majority}) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(bank.norm({Label::one, Group::minority}) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(bank.norm({Label::two, Group::majority}) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(bank.norm({Label::two, Group::minority}) == doctest::Approx(0.5).epsilon(1e-12));
  const Eigen::Matrix4d gram = bank.matrix().transpose() * bank.matrix();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i != j) CHECK(std::abs(gram(i, j)) < 1e-12);
    }
  }
}

TEST_CASE("unit-norm bank in d=4 has identity Gram matrix") {
  const FeatureBank bank = make_feature_bank(4, {1, 1, 1, 1}, 3);
  const Eigen::Matrix4d gram = bank.matrix().transpose() * bank.matrix();
  CHECK((gram - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("bank rejects bad shapes and norms") {
  CHECK_THROWS_AS(make_feature_bank(3, {1, 1, 1, 1}, 1), ConfigError);
  CHECK_THROWS_AS(make_feature_bank(10, {1, 0, 1, 1}, 1), ConfigError);
}

TEST_CASE("spec validation") {
  DataSpec spec = default_spec();
  CHECK_NOTHROW(spec.validate());
  SUBCASE("p_class at the boundary") {
    spec.p_class = 1.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
  SUBCASE("p_majority not above one half") {
    spec.p_majority = 0.5;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
  SUBCASE("nonpositive sigma_p") {
    spec.sigma_p = 0.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
  SUBCASE("minority feature dominating") {
    spec.bank = make_feature_bank(20, {0.1, 5.0, 1.0, 0.5}, 1);
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
}

TEST_CASE("mixture proportions are products of p_c and p_f") {
  const DataSpec spec = default_spec();
  CHECK(spec.proportion({Label::one, Group::majority}) == doctest::Approx(4.0 / 9));
  CHECK(spec.proportion({Label::one, Group::minority}) == doctest::Approx(2.0 / 9));
  CHECK(spec.proportion({Label::two, Group::majority}) == doctest::Approx(2.0 / 9));
  CHECK(spec.proportion({Label::two, Group::minority}) == doctest::Approx(1.0 / 9));
}

TEST_CASE("noise patches are orthogonal to every feature") {
  const DataSpec spec = default_spec();
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Eigen::VectorXd xi = sample_noise_patch(spec, rng);
    for (Cell c : kAllCells) {
      const auto u = spec.bank.feature(c);
      CHECK(std::abs(xi.dot(u)) <= 1e-8 * xi.norm() * u.norm());
    }
  }
}

TEST_CASE("noise norm mean matches sigma_p^2 d") {
  const DataSpec spec = default_spec();
  Rng rng(5);
  RunningStats ratio;
  for (int i = 0; i < 10000; ++i) {
    ratio.add(sample_noise_patch(spec, rng).squaredNorm() / (0.04 * 100));
  }
  // The projector removes four of the hundred directions: expected ratio 0.96.
  CHECK(ratio.mean() >= 0.9);
  CHECK(ratio.mean() <= 1.02);
}

TEST_CASE("zero sigma_p gives a zero noise patch") {
  DataSpec spec = default_spec();
  spec.sigma_p = 0.0;
  Rng rng(1);
  CHECK(sample_noise_patch(spec, rng).isZero(0.0));
}

TEST_CASE("each sample carries exactly one bank feature bitwise") {
  const DataSpec spec = default_spec();
  const Dataset data = generate_dataset(spec, 500, 9);
  for (const Sample& s : data.samples) {
    const Eigen::VectorXd u = spec.bank.feature({s.label, s.group});
    int matches = 0;
    for (int j = 0; j < 2; ++j) matches += (s.patches.col(j).array() == u.array()).all() ? 1 : 0;
    CHECK(matches == 1);
    CHECK((s.feature_patch().array() == u.array()).all());
  }
}

TEST_CASE("p_class of one labels everything class 1") {
  DataSpec spec = default_spec();
  spec.p_class = 1.0;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) CHECK(draw_sample(spec, rng).label == Label::one);
}

TEST_CASE("group frequencies over 90000 draws") {
  const DataSpec spec = default_spec();
  Rng rng(123);
  std::array<std::int64_t, 4> counts{};
  const int n = 90000;
  for (int i = 0; i < n; ++i) {
    const Sample s = draw_sample(spec, rng);
    ++counts[static_cast<std::size_t>(Cell{s.label, s.group}.index())];
  }
  const std::array<double, 4> gamma = {4.0 / 9, 2.0 / 9, 2.0 / 9, 1.0 / 9};
  for (int c = 0; c < 4; ++c) {
    const double freq = static_cast<double>(counts[c]) / n;
    CHECK(std::abs(freq - gamma[c]) < 0.01);
    CHECK(binomial_two_sided_p(counts[c], n, gamma[c]) > 0.01);
  }
}

TEST_CASE("conditional draws") {
  const DataSpec spec = default_spec();
  Rng rng(4);
  const Sample s = draw_conditional(spec, {Label::one, Group::majority}, rng);
  CHECK(s.label == Label::one);
  CHECK(s.group == Group::majority);
  const Cell cell{Label::two, Group::minority};
  for (int i = 0; i < 1000; ++i) {
    const Sample t = draw_conditional(spec, cell, rng);
    CHECK((t.feature_patch().array() == spec.bank.feature(cell).array()).all());
  }
}

TEST_CASE("pooled conditional draws match the marginal sampler") {
  // Pick a cell by its mixture weight, draw conditionally, and compare the cell
  // and slot counts against draw_sample with a chi-square test.
  const DataSpec spec = default_spec();
  Rng pooled_rng(31), marginal_rng(32);
  std::discrete_distribution<int> pick({4.0 / 9, 2.0 / 9, 2.0 / 9, 1.0 / 9});
  std::array<std::int64_t, 8> pooled{}, marginal{};
  for (int i = 0; i < 10000; ++i) {
    const Sample a = draw_conditional(spec, Cell::from_index(pick(pooled_rng)), pooled_rng);
    ++pooled[static_cast<std::size_t>(2 * Cell{a.label, a.group}.index() + a.feature_slot - 1)];
    const Sample b = draw_sample(spec, marginal_rng);
    ++marginal[static_cast<std::size_t>(2 * Cell{b.label, b.group}.index() + b.feature_slot - 1)];
  }
  std::array<double, 8> expected{};
  for (int c = 0; c < 4; ++c) {
    expected[2 * c] = expected[2 * c + 1] = spec.proportion(Cell::from_index(c)) / 2;
  }
  CHECK(chi_square_p(pooled, expected) > 0.01);
  CHECK(chi_square_p(marginal, expected) > 0.01);
}

TEST_CASE("datasets are deterministic in the seed") {
  const DataSpec spec = default_spec();
  const Dataset a = generate_dataset(spec, 50, 77);
  const Dataset b = generate_dataset(spec, 50, 77);
  const Dataset c = generate_dataset(spec, 50, 78);
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < 50; ++i) {
    all_equal &= (a.samples[i].patches.array() == b.samples[i].patches.array()).all();
    any_diff |= !(a.samples[i].patches.array() == c.samples[i].patches.array()).all();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("noise norm concentrates within [0.5, 1.5] sigma_p^2 d") {
  for (int d : {64, 100, 256}) {
    const DataSpec spec = default_spec(3, 0.3, d);
    Rng rng(static_cast<std::uint64_t>(d));
    const int n = 5000;
    int inside = 0;
    const double scale = 0.09 * d;
    for (int i = 0; i < n; ++i) {
      const double r = sample_noise_patch(spec, rng).squaredNorm() / scale;
      inside += (r >= 0.5 && r <= 1.5) ? 1 : 0;
    }
    CHECK(static_cast<double>(inside) / n >= 1.0 - 1.0 / d);
  }
}

TEST_CASE("rotated simple banks") {
  const double pi = std::numbers::pi;
  SUBCASE("zero rotation is the identity") {
    const auto [pre, fine] = make_simple_banks(50, 2.0, 0.0, 1);
    CHECK((pre.feature(Label::one).array() == fine.feature(Label::one).array()).all());
    CHECK((pre.feature(Label::two).array() == fine.feature(Label::two).array()).all());
  }
  SUBCASE("quarter turn maps u1 to u2 and u2 to -u1") {
    const auto [pre, fine] = make_simple_banks(50, 2.0, pi / 2, 1);
    CHECK((fine.feature(Label::one) - pre.feature(Label::two)).norm() < 1e-12);
    CHECK((fine.feature(Label::two) + pre.feature(Label::one)).norm() < 1e-12);
  }
  SUBCASE("inner product at 22.5 degrees") {
    const double theta = 22.5 * pi / 180;
    const auto [pre, fine] = make_simple_banks(50, 4.0, theta, 1);
    CHECK(fine.feature(Label::one).dot(pre.feature(Label::one)) ==
          doctest::Approx(std::cos(theta) * 16).epsilon(1e-12));
  }
}

TEST_CASE("balanced simple datasets and projected noise") {
  const auto [pre, fine] = make_simple_banks(40, 1.0, 0.3, 5);
  const Dataset data = generate_balanced(fine, 0.5, 30, 6);
  REQUIRE(data.size() == 60);
  int ones = 0;
  for (const Sample& s : data.samples) {
    ones += s.label == Label::one ? 1 : 0;
    for (Label y : {Label::one, Label::two}) {
      CHECK(std::abs(s.noise_patch().dot(fine.feature(y))) < 1e-10);
    }
  }
  CHECK(ones == 30);
}

TEST_CASE("dataset dump round-trips bitwise") {
  const Dataset data = generate_dataset(default_spec(), 40, 8);
  const auto path = dpfl::testing::scratch_dir("dataset") / "d.bin";
  write_dataset(path, data);
  const Dataset back = read_dataset(path);
  REQUIRE(back.size() == data.size());
  CHECK(back.dim == data.dim);
  CHECK(back.seed == data.seed);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK((back.samples[i].patches.array() == data.samples[i].patches.array()).all());
    CHECK(back.samples[i].label == data.samples[i].label);
    CHECK(back.samples[i].group == data.samples[i].group);
    CHECK(back.samples[i].feature_slot == data.samples[i].feature_slot);
  }
}

TEST_CASE("truncated dataset dump is rejected") {
  const auto dir = dpfl::testing::scratch_dir("dataset_bad");
  write_dataset(dir / "d.bin", generate_dataset(default_spec(), 5, 1));
  std::filesystem::resize_file(dir / "d.bin", 30);
  CHECK_THROWS(read_dataset(dir / "d.bin"));
}
