#include "bessopm/low_level_control.hpp"

#include <algorithm>
#include <cmath>

#include "bessopm/errors.hpp"

namespace bessopm {

double pi_mismatch(PiState& pi, double v_out, double dt, bool freeze_integral) {
  const double error = pi.v_ref - v_out;
  if (!freeze_integral) {
    pi.integral += error * dt;
    pi.integral = std::clamp(pi.integral, -pi.integral_limit, pi.integral_limit);
  }
  return pi.kp * error + pi.ki * pi.integral;
}

double bus_step(BusModel& bus, double supplied, double demanded, double dt) {
  if (bus.mode == BusMode::Ideal) {
    bus.voltage = bus.v_ref - bus.gain * (demanded - supplied);
    return bus.voltage;
  }
  if (!(bus.voltage > 0.0))
    throw SimulationFault("dynamic bus model requires positive voltage");
  bus.voltage += dt * (supplied - demanded) / (bus.capacitance * bus.voltage);
  if (!(bus.voltage > 0.0))
    throw SimulationFault("bus voltage collapsed to " +
                          std::to_string(bus.voltage));
  return bus.voltage;
}

Allocation allocate(const Eigen::VectorXd& mu, double p_out_pred,
                    double p_tilde, const PackParameters& params,
                    const PackState& state) {
  const int n = params.size();
  Allocation a;
  a.power.resize(n);
  a.saturated.setConstant(n, false);
  const double effective = p_out_pred + p_tilde;
  for (int j = 0; j < n; ++j) {
    const double u = ocv(params.cells[j], state.soc[j]);
    const double p_max = u * params.cells[j].current_limits.max;
    const double p_min = u * params.cells[j].current_limits.min;
    const double want = mu[j] * effective;
    a.requested += want;
    const double got = std::max(std::min(want, p_max), p_min);
    a.saturated[j] = got != want;
    a.power[j] = got;
  }
  a.shortfall = a.requested - a.power.sum();
  return a;
}

}  // namespace bessopm
