#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "bessopm/cell_model.hpp"
#include "bessopm/demand.hpp"
#include "bessopm/enki_solver.hpp"
#include "bessopm/low_level_control.hpp"
#include "bessopm/opm_problem.hpp"
#include "bessopm/psr_policy.hpp"

namespace bessopm {

// Per-cell initial-condition specification: a shared constant, a seeded
// uniform draw, or an explicit list of length n.
struct InitSpec {
  enum class Kind { Constant, Uniform, Values };
  Kind kind = Kind::Constant;
  double value = 0.0;
  double low = 0.0;
  double high = 0.0;
  std::vector<double> values;

  Eigen::VectorXd materialize(int n, std::uint64_t stream_key) const;
};

struct LowLevelConfig {
  double kp = 5.0;
  double ki = 20.0;
  double v_ref = 30.0;
  BusMode bus_mode = BusMode::Ideal;
  double bus_gain = 0.01;
  double bus_capacitance = 10.0;
  double integral_limit = 1e6;
};

// Fully-validated closed-loop scenario; all defaults applied at load time and
// echoed into reports for provenance.
struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  int n = 200;
  CellParameters cell;  // shared template; res_base may be overridden per cell
  InitSpec init_soc{InitSpec::Kind::Constant, 0.725, 0.0, 0.0, {}};
  InitSpec init_temp{InitSpec::Kind::Constant, 298.0, 0.0, 0.0, {}};
  InitSpec init_res_base{InitSpec::Kind::Constant, 0.0313, 0.0, 0.0, {}};
  PolicyParameters policy;  // theta component unused (theta_nominal governs)
  OpmConfig opm;
  EnkiConfig enki;
  LowLevelConfig low_level;
  DemandProfile demand;
  double duration = 3600.0;
  double opm_period = 30.0;
  bool warm_start = true;
  bool full_series_forced = false;  // --full-series or sim.full_series

  bool full_series() const { return full_series_forced || n <= 50; }
  void validate() const;

  // Materialize the heterogeneous pack and initial state (seeded draws).
  PackParameters build_pack() const;
  PackState initial_state() const;
};

// Strict parse: unknown keys and invariant violations raise ConfigError with
// the offending key path.
Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::string& path);

// Full echo with every default materialized; round-trips through
// scenario_from_json.
nlohmann::json scenario_to_json(const Scenario& s);

}  // namespace bessopm
