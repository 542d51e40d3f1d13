// SPDX-License-Identifier: Apache-2.0
//
// Seed-stream splitting. Every random draw in a run is keyed by
// (global_seed, seed_index, repeat_id, stream) so repeats can execute in any
// order or in parallel and still reproduce bit-for-bit.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace backflow {

enum class Stream : std::uint64_t {
  init = 1,
  base_training = 2,
  batch_plan = 3,
  aug_first = 4,  // shared by A and A'
  aug_second = 5,
  probe = 6,
  bootstrap = 7,
  diagnostics = 8,
  synthetic = 9,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based derivation; distinct tuples give decorrelated 64-bit seeds.
std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t seed_index,
                          std::uint64_t repeat_id, Stream stream);

/// Folds an arbitrary label (e.g. a regime name) into a seed.
std::uint64_t hash_label(std::string_view label, std::uint64_t salt = 0);

using Rng = std::mt19937_64;

}  // namespace backflow
