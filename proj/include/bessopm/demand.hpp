#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace bessopm {

struct StepEvent {
  double time = 0.0;   // seconds
  double power = 0.0;  // watts; overrides the actual demand from this time on
};

// Square-wave demand with slowly evolving uniform noise: the predicted series
// is the nominal wave (sign flip every switch period, discharging first); the
// actual series adds noise redrawn toward a fresh uniform target every
// noise_correlation seconds with linear interpolation. Explicit step events
// replace the actual series from their time until the next event.
struct DemandProfile {
  double nominal = 2000.0;
  double switch_period = 1200.0;
  double noise_halfwidth = 200.0;
  double noise_correlation = 60.0;
  std::vector<StepEvent> events;

  void validate() const;
};

struct DemandSeries {
  Eigen::VectorXd predicted;
  Eigen::VectorXd actual;
};

DemandSeries gen_demand(const DemandProfile& profile, double duration, double dt,
                        std::uint64_t seed);

}  // namespace bessopm
