#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "bessopm/compare.hpp"
#include "bessopm/errors.hpp"
#include "bessopm/report_io.hpp"
#include "bessopm/simulation.hpp"

using namespace bessopm;
using nlohmann::json;

namespace {

const std::string kScenarioDir = BESSOPM_SCENARIO_DIR;

Scenario small_scenario() {
  json j;
  j["name"] = "unit";
  j["seed"] = 3;
  j["pack"]["n"] = 3;
  j["pack"]["init_soc"] = {{"values", {0.74, 0.72, 0.70}}};
  j["demand"] = {{"nominal", 30.0},
                 {"switch_period", 40.0},
                 {"noise_halfwidth", 3.0},
                 {"noise_correlation", 10.0}};
  j["enki"] = {{"particles", 20}, {"max_iters", 5}};
  j["opm"] = {{"horizon", 3}};
  j["sim"] = {{"duration", 60.0}, {"opm_period", 20.0}};
  return scenario_from_json(j);
}

}  // namespace

TEST_CASE("bundled table1 scenario carries the reference values") {
  const Scenario sc = load_scenario(kScenarioDir + "/table1.json");
  CHECK(sc.n == 200);
  CHECK(sc.cell.capacity_ah == 2.5);
  CHECK(sc.opm.soc_band == 0.005);
  CHECK(sc.opm.temp_band == 1.0);
  CHECK(sc.opm.dt == 1.0);
  CHECK(sc.opm.horizon == 10);
  CHECK(sc.cell.soc_limits.min == 0.05);
  CHECK(sc.cell.soc_limits.max == 0.95);
  CHECK(sc.cell.current_limits.min == -5.0);
  CHECK(sc.cell.current_limits.max == 5.0);
  CHECK(sc.demand.nominal == 2000.0);
  CHECK(sc.policy.xi_q == 8.0);
  CHECK(sc.policy.xi_t == 12.0);
}

TEST_CASE("defaults are applied and echoed") {
  json j;
  j["pack"]["n"] = 4;
  const Scenario sc = scenario_from_json(j);
  CHECK(sc.cell.converter_res == 0.010);  // missing R_C picks up the default
  CHECK(sc.opm.horizon == 10);
  // loss weight derived from the nominal demand
  CHECK(sc.opm.loss_weight ==
        doctest::Approx(1.0 / (2000.0 * 2000.0)).epsilon(1e-12));
  const json echo = scenario_to_json(sc);
  CHECK(echo["pack"]["converter_res"] == 0.010);
  CHECK(echo["opm"]["loss_weight"] == sc.opm.loss_weight);
  // the echo parses back to an identical scenario
  const Scenario back = scenario_from_json(echo);
  CHECK(back.n == sc.n);
  CHECK(back.initial_state().soc == sc.initial_state().soc);
  CHECK(scenario_to_json(back) == echo);
}

TEST_CASE("strict scenario validation") {
  json j;
  j["pack"]["n"] = 2;

  json typo = j;
  typo["pack"]["capaciy_ah"] = 2.5;
  CHECK_THROWS_WITH_AS(static_cast<void>(scenario_from_json(typo)),
                       doctest::Contains("capaciy_ah"), ConfigError);

  json badkey = j;
  badkey["opmx"] = json::object();
  CHECK_THROWS_AS(static_cast<void>(scenario_from_json(badkey)), ConfigError);

  json frac = j;
  frac["sim"] = {{"duration", 10.5}, {"opm_period", 1.0}};
  CHECK_THROWS_AS(static_cast<void>(scenario_from_json(frac)), ConfigError);

  json fast = j;
  fast["sim"] = {{"duration", 10.0}, {"opm_period", 0.5}};
  CHECK_THROWS_AS(static_cast<void>(scenario_from_json(fast)), ConfigError);

  json two_forms = j;
  two_forms["pack"]["init_soc"] = {{"value", 0.7}, {"uniform", {0.6, 0.8}}};
  CHECK_THROWS_AS(static_cast<void>(scenario_from_json(two_forms)), ConfigError);

  json wrong_len = j;
  wrong_len["pack"]["init_soc"] = {{"values", {0.7, 0.7, 0.7}}};
  CHECK_THROWS_AS(static_cast<void>(scenario_from_json(wrong_len)), ConfigError);

  json bad_mode = j;
  bad_mode["enki"] = {{"lambda_mode", "turbo"}};
  CHECK_THROWS_AS(static_cast<void>(scenario_from_json(bad_mode)), ConfigError);
}

TEST_CASE("demand generation") {
  DemandProfile prof;
  prof.nominal = 2000.0;
  prof.switch_period = 1200.0;
  prof.noise_halfwidth = 0.0;
  const DemandSeries clean = gen_demand(prof, 3600.0, 1.0, 9);
  CHECK(clean.predicted == clean.actual);
  CHECK(clean.predicted[0] == 2000.0);
  CHECK(clean.predicted[1199] == 2000.0);
  CHECK(clean.predicted[1200] == -2000.0);
  CHECK(clean.predicted[2400] == 2000.0);

  prof.noise_halfwidth = 200.0;
  prof.noise_correlation = 60.0;
  const DemandSeries noisy = gen_demand(prof, 3600.0, 1.0, 9);
  CHECK((noisy.actual - noisy.predicted).cwiseAbs().maxCoeff() <= 200.0);
  CHECK((noisy.actual - noisy.predicted).cwiseAbs().maxCoeff() > 0.0);
  // deterministic in the seed
  const DemandSeries again = gen_demand(prof, 3600.0, 1.0, 9);
  CHECK(again.actual == noisy.actual);

  // explicit step events override the actual series
  DemandProfile exp;
  exp.nominal = 90.0;
  exp.switch_period = 3600.0;
  exp.noise_halfwidth = 0.0;
  exp.events = {{300.0, 120.0}, {750.0, 90.0}};
  const DemandSeries ev = gen_demand(exp, 900.0, 1.0, 1);
  CHECK(ev.actual[299] == 90.0);
  CHECK(ev.actual[300] == 120.0);
  CHECK(ev.actual[749] == 120.0);
  CHECK(ev.actual[750] == 90.0);
  CHECK(ev.predicted[300] == 90.0);  // prediction unaffected

  DemandProfile bad = exp;
  bad.events = {{10.0, 1.0}, {5.0, 2.0}};
  CHECK_THROWS_AS(static_cast<void>(gen_demand(bad, 100.0, 1.0, 1)), ConfigError);
}

TEST_CASE("closed loop: record count, determinism, null scenario") {
  const Scenario sc = small_scenario();
  const SimulationReport a = run_closed_loop(sc);
  CHECK(a.steps.size() == 61);  // duration/dt + 1
  CHECK(a.solves.size() == 3);  // t = 0, 20, 40

  const SimulationReport b = run_closed_loop(sc);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t k = 0; k < a.steps.size(); ++k) {
    CHECK(a.steps[k].p_supplied == b.steps[k].p_supplied);
    CHECK(a.steps[k].v_bus == b.steps[k].v_bus);
    CHECK(a.steps[k].theta == b.steps[k].theta);
    CHECK(a.steps[k].soc == b.steps[k].soc);
  }

  // zero demand: SoC frozen, temperatures converge to the environment
  json j;
  j["pack"]["n"] = 2;
  j["pack"]["init_soc"] = {{"value", 0.7}};
  j["pack"]["init_temp"] = {{"value", 305.0}};
  j["demand"] = {{"nominal", 0.0}, {"switch_period", 1e6},
                 {"noise_halfwidth", 0.0}};
  j["enki"] = {{"particles", 8}, {"max_iters", 2}};
  j["sim"] = {{"duration", 50.0}, {"opm_period", 50.0}};
  const SimulationReport idle = run_closed_loop(scenario_from_json(j));
  CHECK(idle.steps.back().soc[0] == 0.7);
  CHECK(idle.steps.back().temp[0] < 305.0);
  CHECK(idle.steps.back().temp[0] > 298.0);
}

TEST_CASE("metrics") {
  const SimulationReport rep = run_closed_loop(small_scenario());
  const SummaryMetrics m = metrics(rep);
  CHECK(m.solve_count == 3);
  CHECK(m.max_soc_dev >= m.mean_soc_dev);
  CHECK(m.total_energy_loss_j > 0.0);

  // synthetic report: a single violated step counts dt of violation, and
  // time-to-balance needs 60 sustained seconds
  SimulationReport synth;
  synth.n = 2;
  synth.dt = 1.0;
  synth.soc_band = 0.005;
  synth.temp_band = 1.0;
  synth.duration = 200.0;
  for (int s = 0; s <= 200; ++s) {
    StepRecord r;
    r.t = s;
    r.theta = Eigen::Vector3d(1.0 / 3, 1.0 / 3, 1.0 / 3);
    r.socdev_max = s >= 100 ? 0.004 : 0.02;
    r.tempdev_max = 0.1;
    synth.steps.push_back(r);
  }
  synth.violations.push_back({42.0, kViolCurrentBounds});
  const SummaryMetrics sm = metrics(synth);
  CHECK(sm.violation_durations_s.at("current_bounds") == 1.0);
  CHECK(sm.time_to_balance_s == 100.0);

  // identical cells: zero deviations throughout
  json j;
  j["pack"]["n"] = 3;
  j["demand"] = {{"nominal", 30.0}, {"switch_period", 1e6},
                 {"noise_halfwidth", 0.0}};
  j["enki"] = {{"particles", 8}, {"max_iters", 2}};
  j["sim"] = {{"duration", 30.0}, {"opm_period", 30.0}};
  const SummaryMetrics eq = metrics(run_closed_loop(scenario_from_json(j)));
  CHECK(eq.max_soc_dev < 1e-12);
  CHECK(eq.max_temp_dev < 1e-12);
}

TEST_CASE("report round-trip is lossless") {
  const std::string dir = "/tmp/bessopm-test-report";
  std::filesystem::remove_all(dir);

  const SimulationReport rep = run_closed_loop(small_scenario());
  write_report(rep, dir);

  // exact header line
  std::ifstream csv(dir + "/series.csv");
  std::string header;
  std::getline(csv, header);
  std::string expect = "t,p_pred,p_act,p_supplied,v_bus,theta1,theta2,theta3,"
                       "loss_w,socdev_max,tempdev_max";
  for (int k = 1; k <= 3; ++k) expect += ",q_" + std::to_string(k);
  for (int k = 1; k <= 3; ++k) expect += ",T_" + std::to_string(k);
  for (int k = 1; k <= 3; ++k) expect += ",mu_" + std::to_string(k);
  CHECK(header == expect);

  const SimulationReport back = read_report(dir);
  CHECK(back.n == rep.n);
  CHECK(back.full_series == rep.full_series);
  REQUIRE(back.steps.size() == rep.steps.size());
  for (std::size_t k = 0; k < rep.steps.size(); ++k) {
    CHECK(back.steps[k].t == rep.steps[k].t);
    CHECK(back.steps[k].p_pred == rep.steps[k].p_pred);
    CHECK(back.steps[k].p_act == rep.steps[k].p_act);
    CHECK(back.steps[k].p_supplied == rep.steps[k].p_supplied);
    CHECK(back.steps[k].v_bus == rep.steps[k].v_bus);
    CHECK(back.steps[k].theta == rep.steps[k].theta);
    CHECK(back.steps[k].loss_w == rep.steps[k].loss_w);
    CHECK(back.steps[k].socdev_max == rep.steps[k].socdev_max);
    CHECK(back.steps[k].tempdev_max == rep.steps[k].tempdev_max);
    CHECK(back.steps[k].soc == rep.steps[k].soc);
    CHECK(back.steps[k].temp == rep.steps[k].temp);
    CHECK(back.steps[k].mu == rep.steps[k].mu);
  }
  REQUIRE(back.solves.size() == rep.solves.size());
  for (std::size_t k = 0; k < rep.solves.size(); ++k) {
    CHECK(back.solves[k].t == rep.solves[k].t);
    CHECK(back.solves[k].theta == rep.solves[k].theta);
    CHECK(back.solves[k].covariance == rep.solves[k].covariance);
    CHECK(back.solves[k].iterations == rep.solves[k].iterations);
    CHECK(back.solves[k].lambda_used == rep.solves[k].lambda_used);
  }
  REQUIRE(back.violations.size() == rep.violations.size());
  for (std::size_t k = 0; k < rep.violations.size(); ++k) {
    CHECK(back.violations[k].t == rep.violations[k].t);
    CHECK(back.violations[k].mask == rep.violations[k].mask);
  }
  CHECK(back.mode_switch_times == rep.mode_switch_times);
}

TEST_CASE("quantile reports for large packs") {
  json j;
  j["pack"]["n"] = 60;
  j["pack"]["init_soc"] = {{"uniform", {0.70, 0.75}}};
  j["demand"] = {{"nominal", 600.0}, {"switch_period", 1e6},
                 {"noise_halfwidth", 0.0}};
  j["enki"] = {{"particles", 10}, {"max_iters", 2}};
  j["sim"] = {{"duration", 10.0}, {"opm_period", 10.0}};
  const Scenario sc = scenario_from_json(j);
  CHECK_FALSE(sc.full_series());
  const SimulationReport rep = run_closed_loop(sc);
  CHECK(rep.steps[0].soc.size() == 0);
  REQUIRE(rep.soc_quantiles.size() == rep.steps.size());
  CHECK(rep.soc_quantiles[0].min <= rep.soc_quantiles[0].median);
  CHECK(rep.soc_quantiles[0].median <= rep.soc_quantiles[0].max);

  const std::string dir = "/tmp/bessopm-test-quantiles";
  std::filesystem::remove_all(dir);
  write_report(rep, dir);
  const SimulationReport back = read_report(dir);
  REQUIRE(back.soc_quantiles.size() == rep.soc_quantiles.size());
  CHECK(back.soc_quantiles[3].median == rep.soc_quantiles[3].median);

  // forcing the full series overrides the size cutoff
  Scenario forced = sc;
  forced.full_series_forced = true;
  CHECK(forced.full_series());
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-7, 298.00553, 1e300, 0.0}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("comparison harness smoke test") {
  CompareOptions opt;
  opt.sizes = {4};
  opt.horizons = {2};
  opt.particles = {8};
  opt.enki_repeats = 1;
  opt.baseline.max_outer = 6;
  opt.baseline.max_inner = 300;
  opt.baseline.grad_tol = 1e-6;
  opt.baseline.constraint_tol = 1e-6;
  const auto cells = compare_runtimes(opt);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].method == "cell-level");
  CHECK(cells[1].method == "enki");
  CHECK(cells[1].particles == 8);
  CHECK(cells[0].mean_solve_s > 0.0);
  CHECK(cells[1].mean_solve_s > 0.0);

  const std::string dir = "/tmp/bessopm-test-compare";
  std::filesystem::remove_all(dir);
  const std::string table = write_compare(cells, dir);
  CHECK(table.find("cell-level optimization") != std::string::npos);
  std::ifstream csv(dir + "/compare.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "n,horizon,method,particles,mean_solve_s,reduction_pct,skipped");
}

TEST_CASE("cli exit codes") {
  const std::string cli = BESSOPM_CLI_PATH;
  if (!std::filesystem::exists(cli)) return;  // not built yet

  // validation error -> 2
  std::ofstream("/tmp/bessopm-bad.json") << "{\"pack\": {\"n\": -3}}";
  int rc = std::system((cli + " simulate --scenario /tmp/bessopm-bad.json"
                              " --out /tmp/bessopm-bad-out >/dev/null 2>&1")
                           .c_str());
  CHECK(WEXITSTATUS(rc) == 2);

  // a tiny run -> 0
  std::ofstream("/tmp/bessopm-ok.json")
      << R"({"pack": {"n": 2}, "demand": {"nominal": 20.0},
            "enki": {"particles": 8, "max_iters": 2},
            "sim": {"duration": 5.0, "opm_period": 5.0}})";
  rc = std::system((cli + " simulate --scenario /tmp/bessopm-ok.json"
                          " --out /tmp/bessopm-ok-out >/dev/null 2>&1")
                       .c_str());
  CHECK(WEXITSTATUS(rc) == 0);

  // solve-step prints a theta estimate as JSON
  std::ofstream("/tmp/bessopm-state.json")
      << R"({"soc": [0.74, 0.70], "temp": [298.0, 298.0]})";
  rc = std::system((cli + " solve-step --scenario /tmp/bessopm-ok.json"
                          " --state /tmp/bessopm-state.json"
                          " > /tmp/bessopm-solve.json 2>/dev/null")
                       .c_str());
  CHECK(WEXITSTATUS(rc) == 0);
  json out;
  std::ifstream("/tmp/bessopm-solve.json") >> out;
  CHECK(out.contains("theta"));
  CHECK(out.contains("covariance"));
  CHECK(out.at("mu").size() == 2);
}
