#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bessopm/scenario.hpp"

namespace bessopm {

// Violation indicator bits recorded per step (sparse).
enum ViolationBit : std::uint32_t {
  kViolTempBounds = 1u << 0,
  kViolSocBounds = 1u << 1,
  kViolCurrentBounds = 1u << 2,
  kViolSocBand = 1u << 3,
  kViolTempBand = 1u << 4,
  kViolSocClamped = 1u << 5,
  kViolAllocationClamp = 1u << 6,  // allocate() bound check; never expected
};

struct StepRecord {
  double t = 0.0;
  double p_pred = 0.0;
  double p_act = 0.0;
  double p_supplied = 0.0;  // sum of clamped per-cell references
  double v_bus = 0.0;
  Eigen::Vector3d theta;
  double loss_w = 0.0;  // realized module losses at this step
  double socdev_max = 0.0;
  double tempdev_max = 0.0;
  // populated only when the report carries the full series
  Eigen::VectorXd soc;
  Eigen::VectorXd temp;
  Eigen::VectorXd mu;
};

struct SolveRecord {
  double t = 0.0;
  double runtime_s = 0.0;  // excluded from determinism / round-trip checks
  int iterations = 0;
  Eigen::Vector3d theta;
  Eigen::Matrix3d covariance;
  double lambda_used = 0.0;
};

struct ViolationRecord {
  double t = 0.0;
  std::uint32_t mask = 0;
};

struct FaultRecord {
  double t = 0.0;
  std::string what;
};

struct Quantiles {
  double min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, max = 0.0;
};

struct SimulationReport {
  nlohmann::json scenario_echo;
  int n = 0;
  bool full_series = false;
  double dt = 1.0;
  double duration = 0.0;
  double opm_period = 0.0;
  double soc_band = 0.0;
  double temp_band = 0.0;
  std::vector<StepRecord> steps;
  std::vector<SolveRecord> solves;
  std::vector<ViolationRecord> violations;
  std::vector<FaultRecord> faults;
  std::vector<double> mode_switch_times;
  // per-step state quantiles, kept instead of full vectors for large packs
  std::vector<Quantiles> soc_quantiles;
  std::vector<Quantiles> temp_quantiles;
};

struct SummaryMetrics {
  double max_soc_dev = 0.0;
  double mean_soc_dev = 0.0;
  double max_temp_dev = 0.0;
  double mean_temp_dev = 0.0;
  double total_energy_loss_j = 0.0;  // integral of the loss over the run
  std::map<std::string, double> violation_durations_s;
  double solve_runtime_mean_s = 0.0;
  double solve_runtime_min_s = 0.0;
  double solve_runtime_max_s = 0.0;
  int solve_count = 0;
  // first time the max SoC deviation stays <= soc_band for 60 s; -1 if never
  double time_to_balance_s = -1.0;
};

// Two-rate closed loop: re-solve the ensemble OPM every opm_period seconds,
// run the PI/allocation/cell stepping every dt. Recoverable faults are
// recorded and the run continues.
SimulationReport run_closed_loop(const Scenario& scenario);

SummaryMetrics metrics(const SimulationReport& report);

}  // namespace bessopm
