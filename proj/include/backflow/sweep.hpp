// SPDX-License-Identifier: Apache-2.0
//
// Sweep orchestration: base snapshots per seed, repeats with the early-stop
// rule, per-repeat JSONL, per-cell diagnostics and summary.json.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "backflow/config.hpp"
#include "backflow/protocol.hpp"
#include "backflow/stats.hpp"

namespace backflow {

inline constexpr int kSchemaVersion = 1;

/// After `floor` repeats, and then every `stride`, stop once the
/// normal-approximation half-width of the mean is at or below `half_width`.
/// Failed repeats (NaN) count toward the schedule but not the half-width.
struct EarlyStopRule {
  std::size_t floor = 64;
  std::size_t stride = 32;
  double half_width = 2e-4;

  bool is_checkpoint(std::size_t completed) const;
  bool should_stop(std::span<const double> values) const;
};

/// Calls `produce(repeat_id)` for repeat ids 0.. in blocks that end on the
/// rule's checkpoints, evaluating blocks on `workers` threads. `produce`
/// returns the value the rule monitors, or NaN for a failed repeat (which is
/// kept but not monitored). Returns the number of repeats run.
std::size_t run_repeats_with_early_stop(const EarlyStopRule& rule, std::size_t max_repeats,
                                        std::size_t workers,
                                        const std::function<double(std::size_t)>& produce);

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct CellKey {
  std::string regime;
  bool break_applied = false;
  std::uint64_t seed = 0;
};

struct CellResult {
  CellKey key;
  std::vector<BackflowRecord> records;
};

struct SweepResult {
  std::vector<CellResult> cells;
  std::filesystem::path output_dir;
  std::size_t persistent_failures = 0;
};

/// Base parameters for one seed: random init, optionally followed by the
/// early-stage training run on the train split.
ParamVector make_base_params(const RunConfig& config, const ModelSpec& spec,
                             const Dataset& dataset, std::uint64_t seed_index);

/// Resolves the configured data source and its probe split.
Dataset prepare_dataset(const RunConfig& config);

/// Fills input_dim / num_classes from the dataset.
ModelSpec resolve_model(const RunConfig& config, const Dataset& dataset);

/// Runs every (regime, break flag, seed) cell and writes artifacts when
/// `write_artifacts` is set.
SweepResult run_sweep(const RunConfig& config, bool write_artifacts = true);

/// Deterministic JSON text of summary.json (timestamp confined to "header").
std::string build_summary_json(const RunConfig& config, const std::vector<CellResult>& cells,
                               const std::string& timestamp);

}  // namespace backflow
