#pragma once

#include <Eigen/Dense>
#include <vector>

namespace bessopm {

struct Bounds {
  double min = 0.0;
  double max = 0.0;
};

// Static parameters of one cell/converter module: Rint electrical model with
// an SoC-dependent OCV polynomial and exponential resistance curve, plus a
// lumped thermal node coupled to the environment by convection.
struct CellParameters {
  double capacity_ah = 2.5;                // amp-hours
  std::vector<double> ocv_coeffs =         // volts, ascending powers of SoC
      {3.3, 2.61, -9.36, 19.7, -19.0, 6.9};
  double res_base = 0.0313;                // ohms
  double res_exp_coeff = 0.0678;           // ohms
  double res_exp_rate = 13.2;              // dimensionless
  double converter_res = 0.010;            // ohms, series converter loss model
  double heat_capacity = 40.23;            // J/K
  double conv_resistance = 41.05;          // K/W
  double env_temp = 298.0;                 // kelvin
  Bounds soc_limits{0.05, 0.95};
  Bounds current_limits{-5.0, 5.0};        // amps
  Bounds temp_limits{288.0, 318.0};        // kelvin

  // Charge in coulombs; SoC dynamics divide by this.
  double capacity_coulombs() const { return 3600.0 * capacity_ah; }

  // Throws ConfigError when an invariant is broken (non-positive capacity,
  // inverted limits, resistance curve not positive on [0,1], ...).
  void validate() const;
};

struct CellState {
  double soc = 0.5;    // fraction
  double temp = 298.0; // kelvin
};

// Snapshot of the electrical quantities at one operating point. `loss` is the
// cell's ohmic loss R(q) i^2, so internal_power - loss == terminal_v * current
// holds exactly; converter loss is accounted separately by module_loss().
struct ElectricalPoint {
  double ocv = 0.0;
  double resistance = 0.0;
  double current = 0.0;
  double terminal_v = 0.0;
  double internal_power = 0.0;
  double loss = 0.0;
};

struct SocStep {
  double soc = 0.0;
  bool clamped = false;
};

// OCV map u = Z(q). soc must lie in [0,1]; no extrapolation.
double ocv(const CellParameters& p, double soc);

// Internal resistance R(q) = res_base + res_exp_coeff * exp(-res_exp_rate q).
double resistance(const CellParameters& p, double soc);

// Cell current implied by a power-sharing ratio: i = psr * p_out / ocv(soc).
double current_from_psr(const CellParameters& p, const CellState& s, double psr,
                        double p_out);

// Forward-Euler SoC step; result clamped to [0,1] with a diagnostic flag so
// rollouts under infeasible parameters still produce finite observations.
SocStep step_soc(const CellParameters& p, const CellState& s, double psr,
                 double p_out, double dt);

// Forward-Euler temperature step: ohmic self-heating R(q) i^2 against
// convective cooling (T - T_env)/R_conv.
double step_temp(const CellParameters& p, const CellState& s, double psr,
                 double p_out, double dt);

// Total module loss (R(q) + R_C) psr^2 p_out^2 / ocv^2, watts.
double module_loss(const CellParameters& p, const CellState& s, double psr,
                   double p_out);

ElectricalPoint electrical_point(const CellParameters& p, const CellState& s,
                                 double psr, double p_out);

// A pack is a list of per-cell parameter sets (heterogeneous in general).
struct PackParameters {
  std::vector<CellParameters> cells;

  int size() const { return static_cast<int>(cells.size()); }
  void validate() const;
};

// SoC and temperature vectors at one instant.
struct PackState {
  Eigen::VectorXd soc;
  Eigen::VectorXd temp;

  int size() const { return static_cast<int>(soc.size()); }
};

}  // namespace bessopm
