#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ftcrl::rng {

// SplitMix64 finalizer. Bijective on 64-bit ints, used to decorrelate seeds.
std::uint64_t mix(std::uint64_t x);

// Derives an independent child seed from a master seed and a purpose label.
// Label-keyed derivation keeps every stream stable when new runs are added.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

// Maps the top 53 bits of one generator draw to [0, 1). Avoids
// std::uniform_real_distribution so sequences do not depend on the
// standard library implementation.
template <class Gen>
double uniform01(Gen& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

template <class Gen>
double uniform(Gen& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

template <class Gen>
bool bernoulli(Gen& g, double p) {
  return uniform01(g) < p;
}

}  // namespace ftcrl::rng
