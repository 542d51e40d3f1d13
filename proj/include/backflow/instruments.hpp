// SPDX-License-Identifier: Apache-2.0
//
// Instruments: the controllable interventions of one training step. A batch
// plan fixes I_A and I_B with an exact overlap; an augmentation kernel is a
// seeded deterministic map on the batch.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "backflow/data.hpp"

namespace backflow {

struct BatchPlan {
  std::vector<std::size_t> indices_a;
  std::vector<std::size_t> indices_b;
  double overlap = 0.0;
  bool same_classes = false;
  /// Slots of I_B that could not be filled with the class I_A asked for.
  std::size_t class_shortfall = 0;
};

/// |I_A ∩ I_B| for a batch of size b at overlap rho.
std::size_t shared_count(std::size_t batch_size, double overlap);

/// Draws I_A from the train split, then I_B with exactly floor(rho*b) indices
/// shared with I_A and the rest from the complement of I_A. Throws DataError
/// when the train split is too small.
BatchPlan sample_batch_plan(const Dataset& dataset, std::size_t batch_size, double overlap,
                            bool same_classes, std::uint64_t seed);

enum class AugKind { none, weak, color, blur };

std::string to_string(AugKind kind);
AugKind parse_aug_kind(const std::string& s);

struct AugmentationParams {
  double noise_fraction = 0.05;  // sigma relative to the row's std
  double shift_prob = 0.5;
  double jitter_low = 0.6;
  double jitter_high = 1.4;
  double gray_prob = 0.2;
  double blur_sigma_low = 0.1;
  double blur_sigma_high = 2.0;
  // image mode
  std::size_t crop_pad = 4;
  double flip_prob = 0.5;
  double color_strength = 0.4;
  std::optional<ImageShape> image;
};

struct AugmentationKernel {
  AugKind kind = AugKind::none;
  std::uint64_t seed = 0;
  AugmentationParams params;
};

/// Same shape out; identity for `none`. The weak component is drawn first so
/// kernels sharing a seed share their weak perturbation.
Matrix apply_augmentation(const AugmentationKernel& aug, const Matrix& inputs);

struct OptimizerOverrides {
  double lr = 0.0;
  double momentum = 0.0;
};

struct Instrument {
  std::vector<std::size_t> batch_indices;
  AugmentationKernel aug;
  int k = 1;
  std::optional<OptimizerOverrides> overrides;

  bool operator==(const Instrument& other) const;
};

/// A and A' share I_A, k and overrides; they differ only in augmentation.
std::pair<Instrument, Instrument> make_pair_a_aprime(const BatchPlan& plan,
                                                     const AugmentationKernel& aug_a,
                                                     const AugmentationKernel& aug_aprime, int k,
                                                     std::optional<OptimizerOverrides> overrides);

}  // namespace backflow
