#include "bessopm/opm_problem.hpp"

#include <cmath>
#include <string>

#include "bessopm/errors.hpp"

namespace bessopm {

namespace {

// Per-step model quantities shared by the loss, constraints and dynamics.
struct StepModel {
  Eigen::VectorXd u;   // ocv per cell
  Eigen::VectorXd r;   // cell resistance per cell
  Eigen::VectorXd b;   // loss-matrix diagonal
  Eigen::VectorXd mu;  // power-sharing ratios
  FeatureMatrix f;
  double p = 0.0;

  void compute(const PackState& state, const PolicyParameters& policy,
               const PackParameters& params, double p_out) {
    const int n = params.size();
    p = p_out;
    u.resize(n);
    r.resize(n);
    b.resize(n);
    for (int j = 0; j < n; ++j) {
      u[j] = ocv(params.cells[j], state.soc[j]);
      if (!(u[j] > 0.0)) throw ModelError("ocv must be positive in loss matrix");
      r[j] = resistance(params.cells[j], state.soc[j]);
      const double rt = r[j] + params.cells[j].converter_res;
      b[j] = rt * p_out * p_out / (u[j] * u[j]);
    }
    f = features_with_res(state.soc, state.temp, r,
                          params.cells[0].converter_res, p_out, policy);
    mu = f.phi * policy.theta;
  }

  double loss() const { return mu.cwiseProduct(mu).dot(b); }
};

Eigen::Vector3d loss_block_of(const FeatureMatrix& f, const Eigen::VectorXd& b,
                              const Eigen::Vector3d& theta) {
  // sqrt(Phi^T B Phi) theta via the closed-form symmetric 3x3
  // eigendecomposition, eigenvalues clamped at zero against roundoff
  const Eigen::Matrix3d h = f.phi.transpose() * b.asDiagonal() * f.phi;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig;
  eig.computeDirect(h);
  const Eigen::Vector3d ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose() *
         theta;
}

// Inequality residuals in ObservationLayout class order for one step.
void fill_residuals(double* out, const StepModel& m, const PackState& state,
                    const PackParameters& params, const OpmConfig& config) {
  using C = ObservationLayout::IneqClass;
  const int n = params.size();
  const double q_avg = state.soc.mean();
  const double t_avg = state.temp.mean();
  const double p_eff = std::max(std::abs(m.p), config.p_floor);
  auto at = [&](C c) { return out + static_cast<int>(c) * n; };
  for (int j = 0; j < n; ++j) {
    const CellParameters& cell = params.cells[j];
    at(C::TempLower)[j] = cell.temp_limits.min - state.temp[j];
    at(C::TempUpper)[j] = state.temp[j] - cell.temp_limits.max;
    at(C::SocLower)[j] = cell.soc_limits.min - state.soc[j];
    at(C::SocUpper)[j] = state.soc[j] - cell.soc_limits.max;
    at(C::CurrentLower)[j] = m.u[j] * cell.current_limits.min / p_eff - m.mu[j];
    at(C::CurrentUpper)[j] = m.mu[j] - m.u[j] * cell.current_limits.max / p_eff;
    at(C::SocBandLower)[j] = -(state.soc[j] - q_avg) - config.soc_band;
    at(C::SocBandUpper)[j] = (state.soc[j] - q_avg) - config.soc_band;
    at(C::TempBandLower)[j] = -(state.temp[j] - t_avg) - config.temp_band;
    at(C::TempBandUpper)[j] = (state.temp[j] - t_avg) - config.temp_band;
  }
}

Eigen::Vector2d equality_of(const StepModel& m, const Eigen::Vector3d& theta,
                            const OpmConfig& config) {
  Eigen::Vector2d e;
  e[0] = theta.sum() - 1.0;
  if (std::abs(m.p) < config.p_floor) {
    e[1] = 0.0;
  } else {
    e[1] = m.mu.sum() - 1.0 - m.loss() / std::abs(m.p);
  }
  return e;
}

// Stack one step's observation h(x, theta) into out[0 .. per_step).
void fill_observation(double* out, const StepModel& m, const PackState& state,
                      const PolicyParameters& policy,
                      const PackParameters& params, const OpmConfig& config) {
  const int n = params.size();
  const Eigen::Vector3d lb = loss_block_of(m.f, m.b, policy.theta);
  out[0] = lb[0];
  out[1] = lb[1];
  out[2] = lb[2];
  double* ineq = out + ObservationLayout::kLossEntries;
  fill_residuals(ineq, m, state, params, config);
  const double ag = config.barrier_g.alpha;
  const double bg = config.barrier_g.beta;
  const int ineq_count = ObservationLayout::kIneqClasses * n;
  if (config.smooth_barrier) {
    for (int i = 0; i < ineq_count; ++i)
      ineq[i] = barrier_g_smooth(ineq[i], ag, bg);
  } else {
    for (int i = 0; i < ineq_count; ++i) ineq[i] = barrier_g(ineq[i], ag, bg);
  }
  const Eigen::Vector2d e = equality_of(m, policy.theta, config);
  double* eq = ineq + ineq_count;
  eq[0] = barrier_e(e[0], config.barrier_e.alpha, config.barrier_e.beta);
  eq[1] = barrier_e(e[1], config.barrier_e.alpha, config.barrier_e.beta);
}

}  // namespace

void OpmConfig::validate() const {
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  if (!(soc_band > 0.0)) throw ConfigError("soc_band must be > 0");
  if (!(temp_band > 0.0)) throw ConfigError("temp_band must be > 0");
  if (!(loss_weight > 0.0)) throw ConfigError("loss_weight must be > 0");
  if (!(penalty_weight > 0.0)) throw ConfigError("penalty_weight must be > 0");
  for (double s : penalty_class_scale)
    if (!(s > 0.0)) throw ConfigError("penalty_class_scale entries must be > 0");
  if (!(p_floor > 0.0)) throw ConfigError("p_floor must be > 0");
  if (!(barrier_g.alpha > 0.0) || !(barrier_g.beta > 0.0))
    throw ConfigError("barrier_g parameters must be > 0");
  if (!(barrier_e.alpha > 0.0)) throw ConfigError("barrier_e.alpha must be > 0");
  const double be = barrier_e.beta;
  const long long bi = static_cast<long long>(be);
  if (!(be > 0.0) || be != static_cast<double>(bi) || bi % 2 != 0)
    throw ConfigError("barrier_e.beta must be an even positive integer");
  Eigen::LLT<Eigen::Matrix3d> llt(theta_prior_weight);
  if (llt.info() != Eigen::Success)
    throw ConfigError("theta_prior_weight must be positive definite");
  if (std::abs(theta_nominal.sum() - 1.0) > 1e-9)
    throw ConfigError("theta_nominal must sum to 1");
}

ObservationLayout::Entry ObservationLayout::decode(int offset) const {
  Entry e;
  const int ps = per_step();
  e.step = offset / ps;
  int r = offset - e.step * ps;
  if (r < kLossEntries) {
    e.block = Block::Loss;
    e.loss_index = r;
    return e;
  }
  r -= kLossEntries;
  if (r < kIneqClasses * n_cells) {
    e.block = Block::Inequality;
    e.ineq_class = static_cast<IneqClass>(r / n_cells);
    e.cell = r % n_cells;
    return e;
  }
  e.block = Block::Equality;
  e.eq_index = r - kIneqClasses * n_cells;
  return e;
}

Eigen::VectorXd loss_diag(const PackState& state, const PackParameters& params,
                          double p_out) {
  const int n = params.size();
  Eigen::VectorXd b(n);
  for (int j = 0; j < n; ++j) {
    const double u = ocv(params.cells[j], state.soc[j]);
    if (!(u > 0.0)) throw ModelError("ocv must be positive in loss matrix");
    const double r = resistance(params.cells[j], state.soc[j]) +
                     params.cells[j].converter_res;
    b[j] = r * p_out * p_out / (u * u);
  }
  return b;
}

double total_loss(const Eigen::Vector3d& theta, const FeatureMatrix& features,
                  const Eigen::VectorXd& loss_diag) {
  const Eigen::VectorXd mu = features.phi * theta;
  return mu.cwiseProduct(mu).dot(loss_diag);
}

Eigen::VectorXd inequality_residuals(const PackState& state,
                                     const Eigen::Vector3d& theta,
                                     const FeatureMatrix& features,
                                     const PackParameters& params, double p_out,
                                     const OpmConfig& config) {
  const int n = params.size();
  StepModel m;
  m.p = p_out;
  m.f = features;
  m.mu = features.phi * theta;
  m.u.resize(n);
  for (int j = 0; j < n; ++j) m.u[j] = ocv(params.cells[j], state.soc[j]);
  Eigen::VectorXd r(ObservationLayout::kIneqClasses * n);
  fill_residuals(r.data(), m, state, params, config);
  return r;
}

Eigen::Vector2d equality_residuals(const Eigen::Vector3d& theta,
                                   const FeatureMatrix& features,
                                   const Eigen::VectorXd& loss_diag,
                                   double p_out, const OpmConfig& config) {
  Eigen::Vector2d e;
  e[0] = theta.sum() - 1.0;
  if (std::abs(p_out) < config.p_floor) {
    e[1] = 0.0;
    return e;
  }
  const Eigen::VectorXd mu = features.phi * theta;
  const double loss = mu.cwiseProduct(mu).dot(loss_diag);
  e[1] = mu.sum() - 1.0 - loss / std::abs(p_out);
  return e;
}

double barrier_g(double x, double alpha, double beta) {
  if (x <= 0.0) return 0.0;
  return barrier_g_smooth(x, alpha, beta);
}

double barrier_g_smooth(double x, double alpha, double beta) {
  const double z = beta * x;
  // softplus overflows exp() near z ~ 700; the asymptote is exact to double
  // precision well before that
  if (z > 40.0) return z / alpha;
  return std::log1p(std::exp(z)) / alpha;
}

double barrier_e(double x, double alpha, double beta) {
  const int b = static_cast<int>(beta);
  double r = 1.0;
  for (int k = 0; k < b; ++k) r *= x;
  return r / alpha;
}

VirtualObservation observe(const PackState& state,
                           const PolicyParameters& policy,
                           const PackParameters& params, double p_out,
                           const OpmConfig& config) {
  const int n = params.size();
  StepModel m;
  m.compute(state, policy, params, p_out);
  Eigen::VectorXd stacked(ObservationLayout{n, 0}.per_step());
  fill_observation(stacked.data(), m, state, policy, params, config);
  VirtualObservation obs;
  obs.loss_block = stacked.head<3>();
  obs.ineq_block = stacked.segment(3, ObservationLayout::kIneqClasses * n);
  obs.eq_block = stacked.tail<2>();
  return obs;
}

RolloutResult rollout(const PackState& x0, const PolicyParameters& policy,
                      const DemandForecast& forecast,
                      const PackParameters& params, const OpmConfig& config) {
  const int n = params.size();
  const int H = config.horizon;
  if (forecast.steps() != H + 1)
    throw ConfigError("forecast length must equal horizon+1 (= " +
                      std::to_string(H + 1) + "), got " +
                      std::to_string(forecast.steps()));
  ObservationLayout layout{n, H};
  RolloutResult result;
  result.trajectory.reserve(H + 1);
  result.observations.resize(layout.dim());

  PackState x = x0;
  StepModel m;
  for (int t = 0; t <= H; ++t) {
    m.compute(x, policy, params, forecast.p_out[t]);
    fill_observation(result.observations.data() + layout.step_offset(t), m, x,
                     policy, params, config);
    result.trajectory.push_back(x);
    if (t == H) break;

    // forward-Euler step, arithmetic identical to step_soc/step_temp
    PackState next;
    next.soc.resize(n);
    next.temp.resize(n);
    for (int j = 0; j < n; ++j) {
      const CellParameters& cell = params.cells[j];
      const double share = m.mu[j] * m.p / m.u[j];
      double q_next =
          x.soc[j] - m.mu[j] * m.p * config.dt / (cell.capacity_coulombs() * m.u[j]);
      if (q_next < 0.0) {
        q_next = 0.0;
        result.any_clamped = true;
      } else if (q_next > 1.0) {
        q_next = 1.0;
        result.any_clamped = true;
      }
      next.soc[j] = q_next;
      const double heat = m.r[j] * share * share;
      const double cooling = (x.temp[j] - cell.env_temp) / cell.conv_resistance;
      next.temp[j] =
          x.temp[j] + config.dt / cell.heat_capacity * (heat - cooling);
    }
    x = std::move(next);
  }
  return result;
}

Eigen::VectorXd observation_precision(const ObservationLayout& layout,
                                      const OpmConfig& config) {
  Eigen::VectorXd prec(layout.dim());
  for (int t = 0; t <= layout.horizon; ++t) {
    prec.segment(layout.loss_offset(t), ObservationLayout::kLossEntries)
        .setConstant(config.loss_weight);
    for (int c = 0; c < ObservationLayout::kIneqClasses; ++c) {
      using C = ObservationLayout::IneqClass;
      const double w =
          config.penalty_weight * config.penalty_class_scale[c / 2];
      prec.segment(layout.ineq_offset(t, static_cast<C>(c)), layout.n_cells)
          .setConstant(w);
    }
    prec.segment(layout.eq_offset(t), ObservationLayout::kEqEntries)
        .setConstant(config.penalty_weight);
  }
  return prec;
}

double mhe_cost(const PolicyParameters& policy, const PackState& x0,
                const DemandForecast& forecast, const PackParameters& params,
                const OpmConfig& config) {
  const RolloutResult r = rollout(x0, policy, forecast, params, config);
  ObservationLayout layout{params.size(), config.horizon};
  const Eigen::VectorXd prec = observation_precision(layout, config);
  const double data = r.observations.cwiseProduct(prec).dot(r.observations);
  const Eigen::Vector3d d = policy.theta - config.theta_nominal;
  return data + d.dot(config.theta_prior_weight * d);
}

}  // namespace bessopm
