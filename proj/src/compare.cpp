#include "bessopm/compare.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "bessopm/errors.hpp"
#include "bessopm/report_io.hpp"

namespace bessopm {

Scenario comparison_scenario(int n, int horizon, int particles,
                             std::uint64_t seed) {
  Scenario sc;
  sc.name = "compare-n" + std::to_string(n) + "-h" + std::to_string(horizon);
  sc.seed = seed;
  sc.n = n;
  // The initial SoC spread stays strictly inside the balancing band so the
  // cell-level problem (hard band constraints on reachable states) is cleanly
  // feasible; the resistance spread keeps the loss surface non-trivial.
  sc.init_soc = {InitSpec::Kind::Uniform, 0.0, 0.7225, 0.7275, {}};
  sc.init_temp = {InitSpec::Kind::Constant, 298.0, 0.0, 0.0, {}};
  sc.init_res_base = {InitSpec::Kind::Uniform, 0.0, 0.0313, 0.0413, {}};
  sc.opm.horizon = horizon;
  // 10 W per cell keeps the per-cell current bounds satisfiable at every
  // pack size; the 200-cell pack matches the 2 kW reference profile.
  sc.demand.nominal = 10.0 * n;
  sc.demand.noise_halfwidth = 0.0;
  sc.opm.loss_weight = 1.0 / (sc.demand.nominal * sc.demand.nominal);
  sc.enki.particles = particles;
  sc.duration = sc.opm.dt;  // single-step scenario; only the solve is timed
  return sc;
}

std::vector<CompareCell> compare_runtimes(const CompareOptions& options) {
  std::vector<CompareCell> cells;
  for (int n : options.sizes) {
    for (int h : options.horizons) {
      const Scenario sc = comparison_scenario(n, h, options.particles.front(),
                                              options.seed);
      const PackParameters pack = sc.build_pack();
      const PackState x0 = sc.initial_state();
      DemandForecast forecast;
      forecast.p_out = Eigen::VectorXd::Constant(h + 1, sc.demand.nominal);

      CompareCell base;
      base.n = n;
      base.horizon = h;
      base.method = "cell-level";
      try {
        double total = 0.0;
        for (int r = 0; r < options.baseline_repeats; ++r) {
          const BaselineResult res =
              solve_cell_level(x0, forecast, pack, sc.opm, options.baseline);
          total += res.runtime_s;
          base.baseline_status = res.status;
        }
        base.mean_solve_s = total / options.baseline_repeats;
      } catch (const ConfigError&) {
        base.skipped = true;  // n*H guard
      }
      cells.push_back(base);

      for (int m : options.particles) {
        CompareCell row;
        row.n = n;
        row.horizon = h;
        row.particles = m;
        row.method = "enki";
        EnkiConfig enki = sc.enki;
        enki.particles = m;
        enki.seed = options.seed;
        double total = 0.0;
        for (int r = 0; r < options.enki_repeats; ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          (void)solve(x0, forecast, pack, sc.opm, enki);
          total += std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
        }
        row.mean_solve_s = total / options.enki_repeats;
        if (!base.skipped && base.mean_solve_s > 0.0)
          row.reduction_pct =
              100.0 * (1.0 - row.mean_solve_s / base.mean_solve_s);
        cells.push_back(row);
      }
    }
  }
  return cells;
}

std::string write_compare(const std::vector<CompareCell>& cells,
                          const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir + "/compare.csv");
  if (!csv) throw SimulationFault("cannot write " + dir + "/compare.csv");
  csv << "n,horizon,method,particles,mean_solve_s,reduction_pct,skipped\n";
  for (const auto& c : cells) {
    csv << c.n << ',' << c.horizon << ',' << c.method << ','
        << (c.particles > 0 ? std::to_string(c.particles) : std::string())
        << ',' << (c.skipped ? std::string() : format_double(c.mean_solve_s))
        << ','
        << (c.method == "enki" && !c.skipped ? format_double(c.reduction_pct)
                                             : std::string())
        << ',' << (c.skipped ? "1" : "0") << "\n";
  }

  std::ostringstream table;
  table << std::left << std::setw(6) << "n" << std::setw(9) << "horizon"
        << std::setw(28) << "method" << std::setw(16) << "mean solve (s)"
        << std::setw(14) << "reduction (%)" << "\n";
  table << std::string(73, '-') << "\n";
  for (const auto& c : cells) {
    std::string method = c.method == "cell-level"
                             ? "cell-level optimization"
                             : "enki, " + std::to_string(c.particles) +
                                   " particles";
    table << std::left << std::setw(6) << c.n << std::setw(9) << c.horizon
          << std::setw(28) << method;
    if (c.skipped) {
      table << std::setw(16) << "skipped" << std::setw(14) << "-";
    } else {
      std::ostringstream t;
      t << std::fixed << std::setprecision(4) << c.mean_solve_s;
      table << std::setw(16) << t.str();
      if (c.method == "enki") {
        std::ostringstream r;
        r << std::fixed << std::setprecision(2) << c.reduction_pct;
        table << std::setw(14) << r.str();
      } else {
        table << std::setw(14) << "-";
      }
    }
    table << "\n";
  }
  std::ofstream txt(dir + "/compare.txt");
  txt << table.str();
  return table.str();
}

}  // namespace bessopm
