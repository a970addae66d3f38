#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace dpfl {

/// Two-patch input: column 0 is x^(1), column 1 is x^(2).
template <typename Scalar>
using InputT = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;
using Input = InputT<double>;

using Rng = std::mt19937_64;

enum class Label : std::uint8_t { one = 1, two = 2 };
enum class Group : std::uint8_t { majority = 0, minority = 1 };

constexpr Label other(Label y) { return y == Label::one ? Label::two : Label::one; }
constexpr int index_of(Label y) { return static_cast<int>(y) - 1; }
constexpr int index_of(Group g) { return static_cast<int>(g); }

/// A (class, group) cell of the mixture; indexed 0..3 as 2*(class-1) + group.
struct Cell {
  Label label = Label::one;
  Group group = Group::majority;

  constexpr int index() const { return 2 * index_of(label) + index_of(group); }
  static constexpr Cell from_index(int i) {
    return {i < 2 ? Label::one : Label::two, (i % 2) == 0 ? Group::majority : Group::minority};
  }
  friend constexpr bool operator==(Cell, Cell) = default;
};

inline constexpr std::array<Cell, 4> kAllCells = {Cell::from_index(0), Cell::from_index(1),
                                                  Cell::from_index(2), Cell::from_index(3)};

std::string to_string(Label y);
std::string to_string(Group g);
std::string to_string(Cell c);

/// Thrown for invalid parameters or malformed configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Stable 64-bit seed for an experiment cell: FNV-1a over the little-endian
/// bytes of (base, tag, coords..., replicate), finalized with splitmix64.
/// Frozen; changing it breaks manifest reproduction.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::span<const std::int64_t> coords, std::uint64_t replicate);

/// Independent stream for worker `index` under `base`.
std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index);

/// Fill with i.i.d. N(0, stddev^2) entries, consuming the stream in storage order.
template <typename Derived>
void fill_gaussian(Eigen::MatrixBase<Derived>& out, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      out(i, j) = stddev * normal(rng);
    }
  }
}

}  // namespace dpfl
