// SPDX-License-Identifier: Apache-2.0
//
// Run configuration (JSON). See configs/ for annotated examples.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "backflow/data.hpp"
#include "backflow/model.hpp"
#include "backflow/protocol.hpp"

namespace backflow {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DatasetSource {
  std::string kind = "synthetic";  // synthetic | csv | idx
  // synthetic
  std::size_t dim = 32;
  std::size_t classes = 10;
  std::size_t per_class = 500;
  double spread = 3.0;
  std::uint64_t seed = 0;
  // files
  std::filesystem::path path;
  std::filesystem::path labels_path;
  bool image_mode = false;
  // split
  std::size_t probe_size = 512;
  std::uint64_t probe_seed = 0;
};

enum class BaseStage { init, early };

struct BaseTraining {
  std::size_t passes = 3;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
};

struct EarlyStop {
  std::size_t floor = 64;
  std::size_t stride = 32;
  double half_width = 2e-4;
};

struct StatsSettings {
  std::size_t bootstrap_resamples = 2000;
  double tost_epsilon = 1e-3;
  double bh_q = 0.05;
};

struct DiagnosticsSettings {
  bool enabled = true;
  int k_max = 6;
  std::size_t probe_subset = 512;
};

struct RunConfig {
  DatasetSource dataset;
  ModelSpec model{ModelKind::mlp1, 0, 0, 64, Activation::tanh};  // dims come from the dataset
  BaseStage base_stage = BaseStage::early;
  BaseTraining base_training;
  MicroConfig micro;
  std::vector<Regime> regimes = regime_presets();
  std::vector<bool> break_flags = {false, true};  // false = no break
  std::uint64_t global_seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t repeats = 128;
  EarlyStop early_stop;
  StatsSettings stats;
  DiagnosticsSettings diagnostics;
  std::size_t workers = 0;  // 0: environment / hardware default
  std::filesystem::path output_dir = "runs/default";
};

/// Parses and validates; errors name the offending field.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string to_string(BaseStage stage);

/// BACKFLOW_WORKERS if set, otherwise hardware concurrency.
std::size_t default_workers();

}  // namespace backflow
