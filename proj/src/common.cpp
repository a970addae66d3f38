#include "dpfl/common.hpp"

namespace dpfl {
namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void mix_bytes(std::uint64_t& h, const unsigned char* bytes, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

void mix_u64(std::uint64_t& h, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  mix_bytes(h, bytes, 8);
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string to_string(Label y) { return y == Label::one ? "1" : "2"; }
std::string to_string(Group g) { return g == Group::majority ? "maj" : "min"; }
std::string to_string(Cell c) { return "(" + to_string(c.label) + "," + to_string(c.group) + ")"; }

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::span<const std::int64_t> coords, std::uint64_t replicate) {
  std::uint64_t h = kFnvOffset;
  mix_u64(h, base);
  mix_bytes(h, reinterpret_cast<const unsigned char*>(tag.data()), tag.size());
  mix_u64(h, coords.size());
  for (std::int64_t c : coords) mix_u64(h, static_cast<std::uint64_t>(c));
  mix_u64(h, replicate);
  return splitmix64(h);
}

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace dpfl
