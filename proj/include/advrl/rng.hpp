#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace advrl {

// The engine is fully specified by the standard; the helpers below avoid the
// implementation-defined distribution classes so streams are reproducible
// across standard libraries.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

/// Standard normal draw (Box-Muller, one value per call).
double standard_normal(Rng& rng);

/// splitmix64 finalizer; derives independent stream seeds from (base, salt).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

}  // namespace advrl
