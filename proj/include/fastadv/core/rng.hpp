#ifndef FASTADV_CORE_RNG_HPP
#define FASTADV_CORE_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fastadv {

using Rng = std::mt19937_64;

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Mixes a base seed with stream coordinates (purpose tag, shard, epoch...)
/// so that independent consumers never share an rng sequence.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = detail::splitmix64(seed);
  for (std::uint64_t p : path) s = detail::splitmix64(s ^ detail::splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(seed, path));
}

// Stream tags.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t attack = 3;
inline constexpr std::uint64_t probe = 4;
inline constexpr std::uint64_t eval = 5;
inline constexpr std::uint64_t data = 6;
}  // namespace stream

}  // namespace fastadv

#endif  // FASTADV_CORE_RNG_HPP
