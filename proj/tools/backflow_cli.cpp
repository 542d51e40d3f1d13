// SPDX-License-Identifier: Apache-2.0
//
// backflow run <config> | oracle --seed S --count N [--demo-witness]
//          | plot-data <run_dir> | report <run_dir>

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "backflow/comb_oracle.hpp"
#include "backflow/config.hpp"
#include "backflow/plotdata.hpp"
#include "backflow/rng.hpp"
#include "backflow/sweep.hpp"

namespace {

using namespace backflow;
using namespace backflow::comb;

int cmd_run(const std::string& config_path) {
  const RunConfig config = load_run_config(config_path);
  const SweepResult result = run_sweep(config);
  std::cout << "wrote " << result.cells.size() << " cells to " << result.output_dir.string()
            << "\n";
  if (result.persistent_failures > 0) {
    std::cerr << result.persistent_failures << " repeats failed the NaN guard after retry\n";
    return 3;
  }
  return 0;
}

std::string pair_text(const std::pair<std::string, std::string>& p) {
  return "(" + p.first + ", " + p.second + ")";
}

int cmd_oracle(std::uint64_t seed, std::size_t count, bool demo) {
  double worst = 0.0;
  std::string worst_where = "none";
  bool ok = true;
  auto check = [&](const char* family, std::size_t i, const RandomCombCase& c) {
    const BackflowReport rep = verify_no_backflow(c.comb, c.pairs, c.b, c.lambda_b, kAllDivergences,
                                                  c.apply_break);
    if (!rep.omc_satisfied || !rep.passed) {
      ok = false;
      std::cout << family << " #" << i << ": " << rep.message << "\n";
    }
    if (rep.max_delta > worst || worst_where == "none") {
      worst = std::max(worst, rep.max_delta);
      worst_where = std::string(family) + " #" + std::to_string(i) + " " +
                    pair_text(rep.worst_pair) + " " + to_string(rep.worst_kind);
    }
  };
  for (std::size_t i = 0; i < count; ++i) {
    check("omc", i, random_omc_comb(derive_seed(seed, i, 0, Stream::synthetic)));
    check("break+sufficiency", i, random_break_comb(derive_seed(seed, i, 1, Stream::synthetic)));
  }
  std::printf("oracle: %zu OMC combs, %zu break+sufficiency combs\n", count, count);
  std::printf("worst delta: %.3e (%s)\n", worst, worst_where.c_str());

  if (demo) {
    const RandomCombCase c = memoryful_demo_comb();
    for (bool brk : {false, true}) {
      const Witness w = search_backflow_witness(c.comb, c.pairs, c.b, kAllDivergences, brk);
      std::printf("memoryful demo %-8s worst pair %s [%s]: D1=%.6f D2=%.6f delta=%.6f\n",
                  brk ? "break:" : "no break:", pair_text(w.pair).c_str(),
                  to_string(w.kind).c_str(), w.d1, w.d2, w.delta);
    }
  }
  const bool pass = ok && worst <= kTheoremTolerance;
  std::printf("%s\n", pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information back-flow experiments on SGD training dynamics"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run a sweep described by a JSON config");
  run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);

  std::uint64_t seed = 0;
  std::size_t count = 100;
  bool demo = false;
  auto* oracle = app.add_subcommand("oracle", "Randomized checks of the no-back-flow theorems");
  oracle->add_option("--seed", seed, "Seed")->default_val(0);
  oracle->add_option("--count", count, "Combs per family")->default_val(100);
  oracle->add_flag("--demo-witness", demo, "Print the memoryful positive back-flow example");

  std::string run_dir;
  auto* plot = app.add_subcommand("plot-data", "Write plot-ready CSV tables for a run");
  plot->add_option("run_dir", run_dir, "Run directory")->required();
  auto* report = app.add_subcommand("report", "Print a markdown summary of a run");
  report->add_option("run_dir", run_dir, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path);
    if (*oracle) return cmd_oracle(seed, count, demo);
    if (*plot) {
      for (const auto& p : write_plot_data(run_dir)) std::cout << p.string() << "\n";
      return 0;
    }
    if (*report) {
      std::cout << render_report(run_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
