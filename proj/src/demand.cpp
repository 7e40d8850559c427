#include "bessopm/demand.hpp"

#include <cmath>

#include "bessopm/errors.hpp"
#include "bessopm/rng.hpp"

namespace bessopm {

void DemandProfile::validate() const {
  if (!std::isfinite(nominal)) throw ConfigError("demand.nominal must be finite");
  if (!(switch_period > 0.0))
    throw ConfigError("demand.switch_period must be > 0");
  if (!(noise_halfwidth >= 0.0))
    throw ConfigError("demand.noise_halfwidth must be >= 0");
  if (!(noise_correlation > 0.0))
    throw ConfigError("demand.noise_correlation must be > 0");
  double prev = -1.0;
  for (const auto& e : events) {
    if (!(e.time >= 0.0) || !std::isfinite(e.power))
      throw ConfigError("demand.events entries must have time >= 0, finite power");
    if (e.time <= prev)
      throw ConfigError("demand.events must be strictly increasing in time");
    prev = e.time;
  }
}

DemandSeries gen_demand(const DemandProfile& profile, double duration, double dt,
                        std::uint64_t seed) {
  profile.validate();
  const int steps = static_cast<int>(std::llround(duration / dt));
  DemandSeries s;
  s.predicted.resize(steps + 1);
  s.actual.resize(steps + 1);

  // Noise targets at multiples of the correlation time; draw enough for the
  // whole run up front so the series is a pure function of the seed.
  const int segments =
      static_cast<int>(std::floor(duration / profile.noise_correlation)) + 2;
  std::vector<double> targets(segments + 1);
  SplitMix64 rng(mix_key(seed, 0x64656d64ULL));  // "demd"
  for (auto& v : targets) v = rng.uniform(-1.0, 1.0) * profile.noise_halfwidth;

  std::size_t next_event = 0;
  double override_power = 0.0;
  bool overridden = false;
  for (int k = 0; k <= steps; ++k) {
    const double t = k * dt;
    const int half_periods = static_cast<int>(std::floor(t / profile.switch_period));
    const double sign = (half_periods % 2 == 0) ? 1.0 : -1.0;
    s.predicted[k] = sign * profile.nominal;

    while (next_event < profile.events.size() &&
           t >= profile.events[next_event].time - 1e-9) {
      override_power = profile.events[next_event].power;
      overridden = true;
      ++next_event;
    }
    if (overridden) {
      s.actual[k] = override_power;
      continue;
    }
    const double pos = t / profile.noise_correlation;
    const int seg = static_cast<int>(std::floor(pos));
    const double frac = pos - seg;
    const double noise = targets[seg] * (1.0 - frac) + targets[seg + 1] * frac;
    s.actual[k] = s.predicted[k] + noise;
  }
  return s;
}

}  // namespace bessopm
