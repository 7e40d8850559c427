#include "bessopm/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "bessopm/errors.hpp"
#include "bessopm/rng.hpp"

namespace bessopm {

namespace {

constexpr std::uint64_t kDemandTag = 0x646d6e64;
constexpr std::uint64_t kSolveTag = 0x736c7665;

Quantiles quantiles_of(const Eigen::VectorXd& v) {
  std::vector<double> d(v.data(), v.data() + v.size());
  std::sort(d.begin(), d.end());
  auto at = [&](double p) {
    const double pos = p * (d.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, d.size() - 1);
    const double frac = pos - lo;
    return d[lo] * (1.0 - frac) + d[hi] * frac;
  };
  return Quantiles{d.front(), at(0.25), at(0.5), at(0.75), d.back()};
}

}  // namespace

SimulationReport run_closed_loop(const Scenario& scenario) {
  scenario.validate();
  const int n = scenario.n;
  const double dt = scenario.opm.dt;
  const int total_steps = static_cast<int>(std::llround(scenario.duration / dt));
  const PackParameters pack = scenario.build_pack();
  PackState state = scenario.initial_state();
  const DemandSeries demand =
      gen_demand(scenario.demand, scenario.duration, dt,
                 mix_key(scenario.seed, kDemandTag));

  SimulationReport report;
  report.scenario_echo = scenario_to_json(scenario);
  report.n = n;
  report.full_series = scenario.full_series();
  report.dt = dt;
  report.duration = scenario.duration;
  report.opm_period = scenario.opm_period;
  report.soc_band = scenario.opm.soc_band;
  report.temp_band = scenario.opm.temp_band;
  report.steps.reserve(total_steps + 1);

  for (int s = 1; s <= total_steps; ++s) {
    if ((demand.predicted[s] >= 0.0) != (demand.predicted[s - 1] >= 0.0))
      report.mode_switch_times.push_back(s * dt);
  }

  PiState pi;
  pi.kp = scenario.low_level.kp;
  pi.ki = scenario.low_level.ki;
  pi.v_ref = scenario.low_level.v_ref;
  pi.integral_limit = scenario.low_level.integral_limit;
  BusModel bus;
  bus.mode = scenario.low_level.bus_mode;
  bus.v_ref = scenario.low_level.v_ref;
  bus.gain = scenario.low_level.bus_gain;
  bus.capacitance = scenario.low_level.bus_capacitance;
  bus.voltage = scenario.low_level.v_ref;

  Eigen::Vector3d theta = scenario.opm.theta_nominal;
  double v_bus = scenario.low_level.v_ref;
  bool prev_all_saturated = false;
  double next_solve_time = 0.0;
  int solve_index = 0;

  for (int s = 0; s <= total_steps; ++s) {
    const double t = s * dt;
    const double p_pred = demand.predicted[s];
    const double p_act = demand.actual[s];

    if (s < total_steps && t + 1e-9 >= next_solve_time) {
      OpmConfig opm = scenario.opm;
      if (scenario.warm_start && solve_index > 0) opm.theta_nominal = theta;
      EnkiConfig enki = scenario.enki;
      enki.seed = mix_key(scenario.seed, kSolveTag,
                          static_cast<std::uint64_t>(solve_index));
      DemandForecast forecast;
      forecast.p_out.resize(opm.horizon + 1);
      for (int h = 0; h <= opm.horizon; ++h) {
        const int idx = std::min(s + h, total_steps);
        forecast.p_out[h] = demand.predicted[idx];
      }
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const ThetaEstimate est = solve(state, forecast, pack, opm, enki);
        theta = est.mean;
        SolveRecord rec;
        rec.t = t;
        rec.runtime_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        rec.iterations = est.iterations_run;
        rec.theta = est.mean;
        rec.covariance = est.covariance;
        rec.lambda_used = est.lambda_used;
        report.solves.push_back(rec);
      } catch (const std::exception& e) {
        report.faults.push_back({t, std::string("opm solve failed: ") + e.what()});
      }
      ++solve_index;
      next_solve_time += scenario.opm_period;
    }

    PolicyParameters policy = scenario.policy;
    policy.theta = theta;
    const FeatureMatrix f = features(state, pack, p_pred, policy);
    const Eigen::VectorXd mu = psr(f, theta);

    const double p_tilde = pi_mismatch(pi, v_bus, dt, prev_all_saturated);
    const Allocation alloc = allocate(mu, p_pred, p_tilde, pack, state);
    prev_all_saturated = alloc.all_saturated();
    const double supplied = alloc.power.sum();
    try {
      v_bus = bus_step(bus, supplied, p_act, dt);
    } catch (const SimulationFault& e) {
      report.faults.push_back({t, e.what()});
      throw;
    }

    std::uint32_t mask = 0;
    double loss_w = 0.0;
    const double q_avg = state.soc.mean();
    const double t_avg = state.temp.mean();
    double socdev = 0.0, tempdev = 0.0;
    for (int j = 0; j < n; ++j) {
      const CellParameters& cell = pack.cells[j];
      const double u = ocv(cell, state.soc[j]);
      const double i = alloc.power[j] / u;
      loss_w += (resistance(cell, state.soc[j]) + cell.converter_res) * i * i;
      if (state.temp[j] < cell.temp_limits.min ||
          state.temp[j] > cell.temp_limits.max)
        mask |= kViolTempBounds;
      if (state.soc[j] < cell.soc_limits.min || state.soc[j] > cell.soc_limits.max)
        mask |= kViolSocBounds;
      if (i < cell.current_limits.min - 1e-9 ||
          i > cell.current_limits.max + 1e-9)
        mask |= kViolCurrentBounds;
      const double p_max = u * cell.current_limits.max;
      const double p_min = u * cell.current_limits.min;
      if (alloc.power[j] > p_max + 1e-9 || alloc.power[j] < p_min - 1e-9)
        mask |= kViolAllocationClamp;
      socdev = std::max(socdev, std::abs(state.soc[j] - q_avg));
      tempdev = std::max(tempdev, std::abs(state.temp[j] - t_avg));
    }
    if (socdev > scenario.opm.soc_band) mask |= kViolSocBand;
    if (tempdev > scenario.opm.temp_band) mask |= kViolTempBand;

    StepRecord rec;
    rec.t = t;
    rec.p_pred = p_pred;
    rec.p_act = p_act;
    rec.p_supplied = supplied;
    rec.v_bus = v_bus;
    rec.theta = theta;
    rec.loss_w = loss_w;
    rec.socdev_max = socdev;
    rec.tempdev_max = tempdev;
    if (report.full_series) {
      rec.soc = state.soc;
      rec.temp = state.temp;
      rec.mu = mu;
    } else {
      report.soc_quantiles.push_back(quantiles_of(state.soc));
      report.temp_quantiles.push_back(quantiles_of(state.temp));
    }
    report.steps.push_back(std::move(rec));

    if (s < total_steps) {
      PackState next;
      next.soc.resize(n);
      next.temp.resize(n);
      for (int j = 0; j < n; ++j) {
        const CellState cs{state.soc[j], state.temp[j]};
        const SocStep step = step_soc(pack.cells[j], cs, 1.0, alloc.power[j], dt);
        if (step.clamped) mask |= kViolSocClamped;
        next.soc[j] = step.soc;
        next.temp[j] = step_temp(pack.cells[j], cs, 1.0, alloc.power[j], dt);
      }
      state = std::move(next);
    }
    if (mask != 0) report.violations.push_back({t, mask});
  }
  return report;
}

SummaryMetrics metrics(const SimulationReport& report) {
  SummaryMetrics m;
  if (report.steps.empty()) return m;
  double soc_sum = 0.0, temp_sum = 0.0;
  for (const auto& s : report.steps) {
    m.max_soc_dev = std::max(m.max_soc_dev, s.socdev_max);
    m.max_temp_dev = std::max(m.max_temp_dev, s.tempdev_max);
    soc_sum += s.socdev_max;
    temp_sum += s.tempdev_max;
    m.total_energy_loss_j += s.loss_w * report.dt;
  }
  m.mean_soc_dev = soc_sum / report.steps.size();
  m.mean_temp_dev = temp_sum / report.steps.size();

  const std::pair<std::string, std::uint32_t> classes[] = {
      {"temp_bounds", kViolTempBounds}, {"soc_bounds", kViolSocBounds},
      {"current_bounds", kViolCurrentBounds}, {"soc_band", kViolSocBand},
      {"temp_band", kViolTempBand},     {"soc_clamped", kViolSocClamped},
      {"allocation_clamp", kViolAllocationClamp},
  };
  for (const auto& [name, bit] : classes) m.violation_durations_s[name] = 0.0;
  for (const auto& v : report.violations) {
    for (const auto& [name, bit] : classes) {
      if (v.mask & bit) m.violation_durations_s[name] += report.dt;
    }
  }

  if (!report.solves.empty()) {
    m.solve_count = static_cast<int>(report.solves.size());
    m.solve_runtime_min_s = report.solves.front().runtime_s;
    for (const auto& s : report.solves) {
      m.solve_runtime_mean_s += s.runtime_s;
      m.solve_runtime_min_s = std::min(m.solve_runtime_min_s, s.runtime_s);
      m.solve_runtime_max_s = std::max(m.solve_runtime_max_s, s.runtime_s);
    }
    m.solve_runtime_mean_s /= report.solves.size();
  }

  // time-to-balance: first instant from which socdev_max stays within the
  // band for 60 consecutive seconds
  const int hold = static_cast<int>(std::ceil(60.0 / report.dt));
  int run = 0;
  for (std::size_t i = 0; i < report.steps.size(); ++i) {
    if (report.steps[i].socdev_max <= report.soc_band) {
      ++run;
      if (run >= hold) {
        m.time_to_balance_s = report.steps[i + 1 - run].t;
        break;
      }
    } else {
      run = 0;
    }
  }
  return m;
}

}  // namespace bessopm
