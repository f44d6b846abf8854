#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace stm {

using Rng = std::mt19937_64;

// Mixes a base seed with stream identifiers (image index, attack id, ...)
// into an independent seed. Every parallel job builds its own Rng from this.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> stream = {}) {
  return Rng(derive_seed(base, stream));
}

// Draws that do not depend on the standard library's distribution
// implementations, so fixed seeds give the same values on every toolchain.
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);
int uniform_int(Rng& rng, int lo, int hi_inclusive);

}  // namespace stm
