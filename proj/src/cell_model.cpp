#include "bessopm/cell_model.hpp"

#include <cmath>
#include <string>

#include "bessopm/errors.hpp"

namespace bessopm {

namespace {

void check_soc_domain(double soc) {
  if (!(soc >= 0.0 && soc <= 1.0)) {
    throw std::domain_error("soc outside [0,1]: " + std::to_string(soc));
  }
}

}  // namespace

void CellParameters::validate() const {
  if (!(capacity_ah > 0.0)) throw ConfigError("capacity_ah must be > 0");
  if (!(heat_capacity > 0.0)) throw ConfigError("heat_capacity must be > 0");
  if (!(conv_resistance > 0.0)) throw ConfigError("conv_resistance must be > 0");
  if (ocv_coeffs.empty()) throw ConfigError("ocv_coeffs must be non-empty");
  if (!(soc_limits.min < soc_limits.max))
    throw ConfigError("soc_limits.min must be < soc_limits.max");
  if (!(current_limits.min < current_limits.max))
    throw ConfigError("current_limits.min must be < current_limits.max");
  if (!(temp_limits.min < temp_limits.max))
    throw ConfigError("temp_limits.min must be < temp_limits.max");
  if (!(converter_res >= 0.0)) throw ConfigError("converter_res must be >= 0");
  if (!(env_temp > 0.0)) throw ConfigError("env_temp must be > 0");
  // The resistance curve has no sign guarantee for arbitrary coefficients;
  // sample it on a fine grid plus both endpoints.
  for (int i = 0; i <= 1000; ++i) {
    const double q = static_cast<double>(i) / 1000.0;
    if (!(resistance(*this, q) > 0.0)) {
      throw ConfigError("resistance curve not positive at soc=" +
                        std::to_string(q));
    }
  }
}

void PackParameters::validate() const {
  if (cells.empty()) throw ConfigError("pack must contain at least one cell");
  for (const auto& c : cells) c.validate();
}

double ocv(const CellParameters& p, double soc) {
  check_soc_domain(soc);
  // Horner evaluation, coefficients ascending in soc powers.
  double v = 0.0;
  for (auto it = p.ocv_coeffs.rbegin(); it != p.ocv_coeffs.rend(); ++it) {
    v = v * soc + *it;
  }
  return v;
}

double resistance(const CellParameters& p, double soc) {
  check_soc_domain(soc);
  return p.res_base + p.res_exp_coeff * std::exp(-p.res_exp_rate * soc);
}

double current_from_psr(const CellParameters& p, const CellState& s, double psr,
                        double p_out) {
  const double u = ocv(p, s.soc);
  if (!(u > 0.0)) throw ModelError("ocv must be positive to map power to current");
  return psr * p_out / u;
}

SocStep step_soc(const CellParameters& p, const CellState& s, double psr,
                 double p_out, double dt) {
  const double u = ocv(p, s.soc);
  if (!(u > 0.0)) throw ModelError("ocv must be positive in SoC dynamics");
  const double next = s.soc - psr * p_out * dt / (p.capacity_coulombs() * u);
  SocStep r;
  r.soc = next;
  if (next < 0.0) {
    r.soc = 0.0;
    r.clamped = true;
  } else if (next > 1.0) {
    r.soc = 1.0;
    r.clamped = true;
  }
  return r;
}

double step_temp(const CellParameters& p, const CellState& s, double psr,
                 double p_out, double dt) {
  const double i = current_from_psr(p, s, psr, p_out);
  const double heat = resistance(p, s.soc) * i * i;
  const double cooling = (s.temp - p.env_temp) / p.conv_resistance;
  return s.temp + dt / p.heat_capacity * (heat - cooling);
}

double module_loss(const CellParameters& p, const CellState& s, double psr,
                   double p_out) {
  const double u = ocv(p, s.soc);
  if (!(u > 0.0)) throw ModelError("ocv must be positive in loss model");
  const double share = psr * p_out / u;
  return (resistance(p, s.soc) + p.converter_res) * share * share;
}

ElectricalPoint electrical_point(const CellParameters& p, const CellState& s,
                                 double psr, double p_out) {
  ElectricalPoint e;
  e.ocv = ocv(p, s.soc);
  e.resistance = resistance(p, s.soc);
  e.current = current_from_psr(p, s, psr, p_out);
  e.terminal_v = e.ocv - e.resistance * e.current;
  e.internal_power = e.ocv * e.current;
  e.loss = e.resistance * e.current * e.current;
  return e;
}

}  // namespace bessopm
