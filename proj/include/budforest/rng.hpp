#pragma once

#include <cstdint>

namespace budforest {

// splitmix64 finalizer; used only for seed derivation, never as the
// training RNG itself.
inline uint64_t splitmix64_hash(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic seed derivation. mix_seed(seed, layer, tree) gives every
// tree in a forest its own reproducible stream; further subkeys hang off
// the result (e.g. mix_seed(tree_seed, kSeedInit)). The chain is fixed:
// changing any term changes the output.
inline uint64_t mix_seed(uint64_t base, uint64_t a = 0, uint64_t b = 0,
                         uint64_t c = 0) {
  uint64_t h = splitmix64_hash(base);
  h = splitmix64_hash(h ^ a);
  h = splitmix64_hash(h ^ b);
  h = splitmix64_hash(h ^ c);
  return h;
}

// Subkey tags for per-tree streams.
inline constexpr uint64_t kSeedBootstrap = 1;
inline constexpr uint64_t kSeedInit = 2;
inline constexpr uint64_t kSeedShuffle = 3;

}  // namespace budforest
