// SPDX-License-Identifier: Apache-2.0

#include "backflow/rng.hpp"

namespace backflow {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t seed_index,
                          std::uint64_t repeat_id, Stream stream) {
  std::uint64_t h = splitmix64(global_seed);
  h = splitmix64(h ^ seed_index);
  h = splitmix64(h ^ repeat_id);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return h;
}

std::uint64_t hash_label(std::string_view label, std::uint64_t salt) {
  // FNV-1a, then mixed.
  std::uint64_t h = 0xCBF29CE484222325ULL ^ salt;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(h);
}

}  // namespace backflow
