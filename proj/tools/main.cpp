#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "bessopm/compare.hpp"
#include "bessopm/errors.hpp"
#include "bessopm/report_io.hpp"
#include "bessopm/rng.hpp"
#include "bessopm/simulation.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitFault = 3;

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto pos = csv.find(',', start);
    const std::string tok =
        csv.substr(start, pos == std::string::npos ? pos : pos - start);
    if (!tok.empty()) out.push_back(std::stoi(tok));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (out.empty()) throw bessopm::ConfigError("empty list: '" + csv + "'");
  return out;
}

int run_simulate(const std::string& scenario_path, const std::string& out_dir,
                 std::int64_t seed_override, bool full_series) {
  bessopm::Scenario scenario = bessopm::load_scenario(scenario_path);
  if (seed_override >= 0)
    scenario.seed = static_cast<std::uint64_t>(seed_override);
  if (full_series) scenario.full_series_forced = true;
  const bessopm::SimulationReport report = bessopm::run_closed_loop(scenario);
  bessopm::write_report(report, out_dir);
  const bessopm::SummaryMetrics m = bessopm::metrics(report);
  std::cout << "simulated " << report.duration << " s, " << report.steps.size()
            << " records, " << report.solves.size() << " OPM solves\n"
            << "max SoC dev " << m.max_soc_dev << ", max temp dev "
            << m.max_temp_dev << " K, energy loss " << m.total_energy_loss_j
            << " J\n"
            << "report written to " << out_dir << "\n";
  return report.faults.empty() ? kExitOk : kExitFault;
}

int run_solve_step(const std::string& scenario_path,
                   const std::string& state_path) {
  const bessopm::Scenario scenario = bessopm::load_scenario(scenario_path);
  std::ifstream in(state_path);
  if (!in) throw bessopm::ConfigError("cannot open state file: " + state_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw bessopm::ConfigError("state parse error: " + std::string(e.what()));
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "soc" && key != "temp")
      throw bessopm::ConfigError("state." + key + ": unknown key");
  }
  const auto soc = j.at("soc").get<std::vector<double>>();
  const auto temp = j.at("temp").get<std::vector<double>>();
  if (static_cast<int>(soc.size()) != scenario.n ||
      static_cast<int>(temp.size()) != scenario.n)
    throw bessopm::ConfigError("state vectors must have length pack.n");
  bessopm::PackState state;
  state.soc = Eigen::Map<const Eigen::VectorXd>(soc.data(), soc.size());
  state.temp = Eigen::Map<const Eigen::VectorXd>(temp.data(), temp.size());

  const bessopm::PackParameters pack = scenario.build_pack();
  const bessopm::DemandSeries demand = bessopm::gen_demand(
      scenario.demand, scenario.duration, scenario.opm.dt, scenario.seed);
  bessopm::DemandForecast forecast;
  forecast.p_out = demand.predicted.head(scenario.opm.horizon + 1);

  const bessopm::ThetaEstimate est =
      bessopm::solve(state, forecast, pack, scenario.opm, scenario.enki);
  bessopm::PolicyParameters policy = scenario.policy;
  policy.theta = est.mean;
  const Eigen::VectorXd mu =
      bessopm::psr(bessopm::features(state, pack, forecast.p_out[0], policy),
                   est.mean);

  json out;
  out["theta"] = {est.mean[0], est.mean[1], est.mean[2]};
  std::vector<std::vector<double>> cov(3, std::vector<double>(3));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cov[r][c] = est.covariance(r, c);
  out["covariance"] = cov;
  out["mu"] = std::vector<double>(mu.data(), mu.data() + mu.size());
  out["iterations"] = est.iterations_run;
  out["lambda_used"] = est.lambda_used;
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int run_compare(const std::string& sizes, const std::string& horizons,
                const std::string& particles, const std::string& out_dir,
                std::uint64_t seed, int repeats) {
  bessopm::CompareOptions opt;
  opt.sizes = parse_int_list(sizes);
  opt.horizons = parse_int_list(horizons);
  opt.particles = parse_int_list(particles);
  opt.seed = seed;
  opt.enki_repeats = repeats;
  const auto cells = bessopm::compare_runtimes(opt);
  std::cout << bessopm::write_compare(cells, out_dir);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power management solver and closed-loop simulator for large "
               "battery packs"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir = "out", state_path;
  std::int64_t seed_override = -1;
  bool full_series = false;
  auto* simulate = app.add_subcommand(
      "simulate", "Run the closed loop and write report.json/series.csv");
  simulate->add_option("--scenario", scenario_path, "Scenario JSON file")
      ->required();
  simulate->add_option("--out", out_dir, "Output directory");
  simulate->add_option("--seed", seed_override, "Override the scenario seed");
  simulate->add_flag("--full-series", full_series,
                     "Write per-cell series regardless of pack size");

  std::string ss_scenario, ss_state;
  auto* solve_step = app.add_subcommand(
      "solve-step", "Solve one OPM step for a given pack state, print JSON");
  solve_step->add_option("--scenario", ss_scenario, "Scenario JSON file")
      ->required();
  solve_step->add_option("--state", ss_state, "State JSON file {soc:[],temp:[]}")
      ->required();

  std::string sizes = "50,100,200", horizons = "5,10,15", parts = "50,100";
  std::string cmp_out = "compare-out";
  std::uint64_t cmp_seed = 1;
  int repeats = 3;
  auto* compare = app.add_subcommand(
      "compare", "Time the ensemble solver against the cell-level baseline");
  compare->add_option("--sizes", sizes, "Pack sizes, comma separated");
  compare->add_option("--horizons", horizons, "Horizon lengths");
  compare->add_option("--particles", parts, "Ensemble sizes");
  compare->add_option("--out", cmp_out, "Output directory");
  compare->add_option("--seed", cmp_seed, "Scenario seed");
  compare->add_option("--repeats", repeats, "Timing repeats per cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (simulate->parsed())
      return run_simulate(scenario_path, out_dir, seed_override, full_series);
    if (solve_step->parsed()) return run_solve_step(ss_scenario, ss_state);
    if (compare->parsed())
      return run_compare(sizes, horizons, parts, cmp_out, cmp_seed, repeats);
  } catch (const bessopm::ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::domain_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const bessopm::SimulationFault& e) {
    std::cerr << "simulation fault: " << e.what() << "\n";
    return kExitFault;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFault;
  }
  return kExitOk;
}
