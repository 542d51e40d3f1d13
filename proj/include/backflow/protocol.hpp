// SPDX-License-Identifier: Apache-2.0
//
// The two-step A -> B micro-experiment and the back-flow witness.
//
// From a cached base snapshot, branch A and branch A' run k steps on the same
// batch I_A under different augmentations; both then run k steps of a common
// instrument B. D1 compares the probe predictions after the first step, D2
// after the second, and delta = D2 - D1. Without a break the momentum buffer
// is carried into B; with a break it is zeroed immediately before B.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "backflow/data.hpp"
#include "backflow/divergences.hpp"
#include "backflow/instruments.hpp"
#include "backflow/model.hpp"
#include "backflow/optimizer.hpp"

namespace backflow {

struct Regime {
  std::string name;
  int k = 1;
  double lr = 0.01;
  double momentum = 0.0;
  AugKind aug_a = AugKind::none;
  AugKind aug_aprime = AugKind::none;
  AugKind aug_b = AugKind::none;
  double overlap = 0.0;
  bool same_classes = false;

  void validate() const;
};

/// Micro-step regime presets: standard, resonant_strong, resonant_mid,
/// orthogonal, negative.
const std::vector<Regime>& regime_presets();
/// Throws std::invalid_argument for unknown names.
Regime regime_preset(const std::string& name);

/// Settings shared by every micro-experiment of a run.
struct MicroConfig {
  std::size_t batch_size = 64;
  double weight_decay = 1e-4;
  std::optional<double> clip_norm = 1.0;
  AugmentationParams aug_params;
};

/// Identity of one repeat for seed derivation.
struct RepeatKey {
  std::uint64_t global_seed = 0;
  std::uint64_t seed_index = 0;
  std::uint64_t repeat_id = 0;
};

using DivergenceValues = std::array<double, 3>;  // indexed like kAllDivergences

inline std::size_t div_index(DivergenceKind k) { return static_cast<std::size_t>(k); }

struct BackflowRecord {
  std::uint64_t repeat_id = 0;
  std::uint64_t seed = 0;
  DivergenceValues d1{};
  DivergenceValues d2{};
  DivergenceValues delta{};
  bool break_applied = false;
  std::optional<double> momentum_alignment;
  std::optional<std::string> error;
  double lr_used = 0.0;
  std::size_t class_shortfall = 0;
};

/// Everything a micro-experiment needs besides the regime.
struct ExperimentContext {
  const ModelSpec& spec;
  const ParamVector& base_params;
  const Dataset& dataset;
  const Matrix& probe_inputs;
  const std::string& probe_id;
  const MicroConfig& micro;
};

/// Endpoints of the four branches, kept for the per-cell diagnostics.
struct BranchEndpoints {
  ParamVector theta_a, theta_aprime, theta_ab, theta_aprime_b;
};

struct MicroOutcome {
  BackflowRecord record;
  std::optional<BranchEndpoints> endpoints;
  /// Parameter change of the first B step on branch A, for break checks.
  std::optional<Vector> first_b_update;
};

/// One repeat. A NaN-guard failure is retried once at half the learning rate;
/// a second failure yields a record with `error` set.
MicroOutcome run_micro_experiment(const ExperimentContext& ctx, const Regime& regime,
                                  bool break_applied, const RepeatKey& key,
                                  bool keep_endpoints = false);

/// Convenience overload returning the record only.
BackflowRecord run_repeat(const ExperimentContext& ctx, const Regime& regime, bool break_applied,
                          const RepeatKey& key);

struct NoncommutePoint {
  int k = 0;
  double tv = 0.0;
};

/// For k = 1..k_max: A-then-B and B-then-A from the same base, TV between the
/// endpoint predictions on the supplied probe subset.
std::vector<NoncommutePoint> run_noncommute_curve(const ExperimentContext& ctx,
                                                  const Regime& regime, bool break_applied,
                                                  const Matrix& probe_subset,
                                                  const RepeatKey& key, int k_max);

/// An instrument resolved against a dataset: augmented batch, labels and the
/// optimizer settings its k micro-steps use.
struct PreparedInstrument {
  Matrix inputs;
  std::vector<int> labels;
  int k = 1;
  OptimizerConfig optimizer;
};

/// Applies the augmentation once; overrides replace lr and momentum of `base`.
PreparedInstrument prepare_instrument(const Dataset& dataset, const Instrument& instrument,
                                      const OptimizerConfig& base);

/// Runs `k` optimizer steps on the given (already augmented) batch.
void run_steps(const ModelSpec& spec, ParamVector& params, OptimizerState& state,
               const Matrix& batch, std::span<const int> labels, int k,
               const OptimizerConfig& config);

/// The witness for explicit instruments: A and A' from `base` with a fresh
/// optimizer, then the common B on each branch. Throws NanGuardError.
MicroOutcome run_two_step(const ModelSpec& spec, const ParamVector& base,
                          const PreparedInstrument& a, const PreparedInstrument& aprime,
                          const PreparedInstrument& b, bool break_applied,
                          const Matrix& probe_inputs, const std::string& probe_id,
                          bool keep_endpoints = false);

/// TV(P(theta_AB), P(theta_BA)) on `probe` when both instruments run k steps,
/// for k = 1..k_max. Throws NanGuardError.
std::vector<NoncommutePoint> noncommute_curve(const ModelSpec& spec, const ParamVector& base,
                                              const PreparedInstrument& a,
                                              const PreparedInstrument& b, bool break_applied,
                                              const Matrix& probe, int k_max);

/// Optimizer settings of a regime's micro-steps.
OptimizerConfig regime_optimizer(const Regime& regime, const MicroConfig& micro);

}  // namespace backflow
