#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bessopm/baseline_solver.hpp"
#include "bessopm/enki_solver.hpp"
#include "bessopm/scenario.hpp"

namespace bessopm {

struct CompareOptions {
  std::vector<int> sizes{50, 100, 200};
  std::vector<int> horizons{5, 10, 15};
  std::vector<int> particles{50, 100};
  int enki_repeats = 3;
  int baseline_repeats = 1;
  std::uint64_t seed = 1;
  BaselineOptions baseline;
};

struct CompareCell {
  int n = 0;
  int horizon = 0;
  int particles = 0;             // 0 for the baseline row
  std::string method;            // "cell-level" or "enki"
  double mean_solve_s = 0.0;
  double reduction_pct = 0.0;    // vs. the cell-level row, enki rows only
  bool skipped = false;          // baseline guard exceeded
  BaselineStatus baseline_status = BaselineStatus::Converged;
};

// One-shot solve timing grid over (n, H) x {cell-level, enki x particles} on
// matched scenarios (10 W nominal demand per cell, heterogeneous SoC and
// resistance draws). Timings cover the solver call only.
std::vector<CompareCell> compare_runtimes(const CompareOptions& options);

// compare.csv plus a fixed-width text table mirroring the runtime-comparison
// layout; returns the rendered table.
std::string write_compare(const std::vector<CompareCell>& cells,
                          const std::string& dir);

// Scenario used for one comparison cell (also handy for tests/benchmarks).
Scenario comparison_scenario(int n, int horizon, int particles,
                             std::uint64_t seed);

}  // namespace bessopm
