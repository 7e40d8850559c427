#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "bessopm/cell_model.hpp"

namespace bessopm {

// PI compensator estimating the supply-demand mismatch from the bus-voltage
// error. Single-owner mutable state advanced by the simulation loop.
struct PiState {
  double kp = 5.0;             // W/V
  double ki = 20.0;            // W/(V s)
  double v_ref = 30.0;         // volts
  double integral = 0.0;       // V s
  double integral_limit = 1e6; // anti-windup bound on |integral|
};

// Mismatch power from the voltage error, rectangular integration. When
// freeze_integral is set (all cells saturated) the integral state is held to
// avoid windup.
double pi_mismatch(PiState& pi, double v_out, double dt,
                   bool freeze_integral = false);

enum class BusMode { Ideal, Dynamic };

// Hardware regulates a physical DC bus; simulation needs a surrogate. Ideal
// mode maps the instantaneous supply deficit straight into a voltage error
// V = V_ref - gain (demanded - supplied); dynamic mode integrates a bus
// capacitor dV/dt = (supplied - demanded)/(C V).
struct BusModel {
  BusMode mode = BusMode::Ideal;
  double v_ref = 30.0;
  double gain = 0.01;        // V/W, ideal mode
  double capacitance = 10.0; // farads, dynamic mode
  double voltage = 30.0;
};

// Advance the bus one step and return the new voltage. Throws SimulationFault
// on dynamic-mode voltage collapse.
double bus_step(BusModel& bus, double supplied, double demanded, double dt);

struct Allocation {
  Eigen::VectorXd power;  // per-cell internal power references, watts
  Eigen::Array<bool, Eigen::Dynamic, 1> saturated;
  double requested = 0.0;  // sum mu_j (p_out + p_tilde) before clamping
  double shortfall = 0.0;  // requested - sum(power)

  bool any_saturated() const { return saturated.any(); }
  bool all_saturated() const { return saturated.all(); }
};

// PSR-guided split of the effective demand with per-cell power limits
// P_min/max = ocv(q) * i_min/max.
Allocation allocate(const Eigen::VectorXd& mu, double p_out_pred,
                    double p_tilde, const PackParameters& params,
                    const PackState& state);

}  // namespace bessopm
