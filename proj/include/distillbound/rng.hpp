#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace distillbound {

// splitmix64; used to derive independent seeds for named sub-streams so that
// adding a consumer never shifts the draws of an existing one.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(base ^ 0x51ab5ea1bULL);
  for (char c : tag) h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  return splitmix64(h ^ index);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

// Uniform in [0,1) straight from engine bits. The standard distributions are
// implementation-defined, which would make seeded runs non-portable.
inline double canonical_unit(std::mt19937_64& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Box-Muller (cosine branch), one value per call.
inline double standard_normal(std::mt19937_64& eng) {
  const double u1 = 1.0 - canonical_unit(eng);  // (0, 1]
  const double u2 = canonical_unit(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace distillbound
