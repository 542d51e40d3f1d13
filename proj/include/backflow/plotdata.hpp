// SPDX-License-Identifier: Apache-2.0
//
// Plot-ready CSV tables and a markdown report from a finished run directory.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace backflow {

/// Writes the CSV tables into `<run_dir>/plots` and returns their paths.
/// Throws std::runtime_error naming any missing input.
std::vector<std::filesystem::path> write_plot_data(const std::filesystem::path& run_dir);

/// Markdown table of the pooled cells in summary.json.
std::string render_report(const std::filesystem::path& run_dir);

/// Cells whose no-break and break means have opposite signs.
struct SignFlipCount {
  std::size_t cells = 0;
  std::size_t flips = 0;
};

/// Counts over the per-seed cells of a summary.json document.
SignFlipCount count_sign_flips(const std::string& summary_json_text);

}  // namespace backflow
