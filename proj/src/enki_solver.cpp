#include "bessopm/enki_solver.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "bessopm/errors.hpp"
#include "bessopm/rng.hpp"

namespace bessopm {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;   // stream tag: prior draws
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;  // stream tag: obs noise
constexpr double kObservationCap = 1e9;
constexpr double kFailedRolloutPenalty = 1e4;

double median_of(Eigen::VectorXd v) {
  std::vector<double> d(v.data(), v.data() + v.size());
  const auto mid = d.begin() + d.size() / 2;
  std::nth_element(d.begin(), mid, d.end());
  double m = *mid;
  if (d.size() % 2 == 0) {
    const auto lo = std::max_element(d.begin(), mid);
    m = 0.5 * (m + *lo);
  }
  return m;
}

void sanitize_observation(Eigen::Ref<Eigen::VectorXd> y) {
  for (int i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) {
      y[i] = kObservationCap;
    } else if (y[i] > kObservationCap) {
      y[i] = kObservationCap;
    } else if (y[i] < -kObservationCap) {
      y[i] = -kObservationCap;
    }
  }
}

std::vector<double> geometric_schedule(int n, double growth) {
  std::vector<double> lambdas(n);
  if (std::abs(growth - 1.0) < 1e-12) {
    std::fill(lambdas.begin(), lambdas.end(), 1.0 / n);
    return lambdas;
  }
  const double scale = (growth - 1.0) / (std::pow(growth, n) - 1.0);
  double g = 1.0;
  for (int l = 0; l < n; ++l) {
    lambdas[l] = scale * g;
    g *= growth;
  }
  return lambdas;
}

}  // namespace

void EnkiConfig::validate() const {
  if (particles < 2) throw ConfigError("enki.particles must be >= 2");
  if (max_iters < 1) throw ConfigError("enki.max_iters must be >= 1");
  if (!(ess_target > 0.0 && ess_target <= 1.0))
    throw ConfigError("enki.ess_target must lie in (0,1]");
  if (!(lambda_growth > 0.0)) throw ConfigError("enki.lambda_growth must be > 0");
  if (loss_precision_override < 0.0 || penalty_precision_override < 0.0)
    throw ConfigError("precision overrides must be >= 0");
}

int worker_count() {
  if (const char* env = std::getenv("BESS_OPM_THREADS")) {
    const int k = std::atoi(env);
    if (k >= 1) return k;
  }
  return omp_get_max_threads();
}

Ensemble init_ensemble(const EnkiConfig& config,
                       const Eigen::Vector3d& theta_nominal,
                       const Eigen::Matrix3d& prior_cov) {
  config.validate();
  Eigen::LLT<Eigen::Matrix3d> llt(prior_cov);
  if (llt.info() != Eigen::Success)
    throw ConfigError("prior covariance must be positive definite");
  const Eigen::Matrix3d chol = llt.matrixL();

  Ensemble ens;
  ens.thetas.resize(config.particles, 3);
  for (int i = 0; i < config.particles; ++i) {
    GaussianStream g(mix_key(config.seed, kInitTag, static_cast<std::uint64_t>(i)));
    Eigen::Vector3d z;
    z << g.next(), g.next(), g.next();
    ens.thetas.row(i) = project_to_simplex(theta_nominal + chol * z).transpose();
  }
  return ens;
}

EnsembleStats ensemble_stats(const Ensemble& ensemble) {
  const int m = ensemble.particles();
  if (m < 2) throw SolverError("ensemble statistics need at least 2 particles");
  EnsembleStats s;
  s.theta_mean = ensemble.thetas.colwise().mean().transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(m - 1));
  s.theta_anomaly =
      (ensemble.thetas.transpose().colwise() - s.theta_mean) * scale;
  s.cov_theta = s.theta_anomaly * s.theta_anomaly.transpose();
  if (ensemble.observations.size() > 0) {
    s.obs_mean = ensemble.observations.rowwise().mean();
    s.obs_anomaly = (ensemble.observations.colwise() - s.obs_mean) * scale;
  } else {
    s.obs_mean.resize(0);
    s.obs_anomaly.resize(0, m);
  }
  return s;
}

Eigen::VectorXd particle_misfits(const Ensemble& ensemble,
                                 const Eigen::VectorXd& precision) {
  const int m = ensemble.particles();
  Eigen::VectorXd misfits(m);
  for (int i = 0; i < m; ++i) {
    const auto y = ensemble.observations.col(i);
    misfits[i] = 0.5 * y.cwiseProduct(precision).dot(y);
  }
  return misfits;
}

double effective_sample_size(const Eigen::VectorXd& misfits, double lambda) {
  const double lo = misfits.minCoeff();
  double sum = 0.0;
  double sum2 = 0.0;
  for (int i = 0; i < misfits.size(); ++i) {
    const double w = std::exp(-lambda * (misfits[i] - lo));
    sum += w;
    sum2 += w * w;
  }
  return sum * sum / sum2;
}

double select_lambda(const Ensemble& ensemble, const Eigen::VectorXd& precision,
                     double remaining_budget, const EnkiConfig& config) {
  if (!(remaining_budget > 0.0 && remaining_budget <= 1.0))
    throw SolverError("remaining tempering budget must lie in (0,1]");
  Eigen::VectorXd misfits = particle_misfits(ensemble, precision);
  if (!misfits.allFinite()) {
    int finite = 0;
    double worst = 0.0;
    for (int i = 0; i < misfits.size(); ++i) {
      if (std::isfinite(misfits[i])) {
        ++finite;
        worst = std::max(worst, misfits[i]);
      }
    }
    if (finite == 0)
      throw SolverError("all particle misfits are non-finite; rollouts diverged");
    for (int i = 0; i < misfits.size(); ++i)
      if (!std::isfinite(misfits[i])) misfits[i] = worst * 10.0 + 1e6;
  }

  const double target = config.ess_target * ensemble.particles();
  if (effective_sample_size(misfits, remaining_budget) >= target)
    return remaining_budget;

  double lo = 0.0;
  double hi = remaining_budget;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double ess = effective_sample_size(misfits, mid);
    if (std::abs(ess - target) <= 0.01 * target) return mid;
    if (ess > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void kalman_update(Ensemble& ensemble, double lambda,
                   const Eigen::VectorXd& precision,
                   const KalmanOptions& options) {
  if (!(lambda > 0.0)) throw SolverError("lambda must be > 0");
  const int m = ensemble.particles();
  const auto d = ensemble.observations.rows();
  if (precision.size() != d)
    throw SolverError("precision size does not match observation dimension");

  auto project_all = [&] {
    if (!options.project_simplex) return;
    for (int i = 0; i < m; ++i) {
      ensemble.thetas.row(i) =
          project_to_simplex(ensemble.thetas.row(i).transpose()).transpose();
    }
  };

  // Rows that vary across the ensemble; all others have zero anomaly and drop
  // out of both the gain and the innovation weighting.
  std::vector<int> active;
  {
    std::vector<char> varies(d, 0);
    const auto& y = ensemble.observations;
    for (int i = 1; i < m; ++i) {
      for (Eigen::Index e = 0; e < d; ++e) {
        varies[e] |= (y(e, i) != y(e, 0));
      }
    }
    for (Eigen::Index e = 0; e < d; ++e)
      if (varies[e]) active.push_back(static_cast<int>(e));
  }
  if (active.empty()) {
    project_all();
    return;
  }
  const int da = static_cast<int>(active.size());

  Eigen::MatrixXd y_act(da, m);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < da; ++k) y_act(k, i) = ensemble.observations(active[k], i);

  const Eigen::VectorXd y_mean = y_act.rowwise().mean();
  const double scale = 1.0 / std::sqrt(static_cast<double>(m - 1));
  const Eigen::MatrixXd anomaly = (y_act.colwise() - y_mean) * scale;

  const Eigen::Vector3d theta_mean =
      ensemble.thetas.colwise().mean().transpose();
  const Eigen::Matrix<double, 3, Eigen::Dynamic> theta_anomaly =
      (ensemble.thetas.transpose().colwise() - theta_mean) * scale;

  // Innovations y_obs + lambda^-1/2 e_i - Y_i on the active rows.
  Eigen::MatrixXd innovations = -y_act;
  if (options.y_obs != nullptr) {
    for (int k = 0; k < da; ++k)
      innovations.row(k).array() += (*options.y_obs)[active[k]];
  }
  const double noise_scale = 1.0 / std::sqrt(lambda);
  if (options.noise != nullptr) {
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < da; ++k)
        innovations(k, i) += noise_scale * (*options.noise)(active[k], i);
  } else if (options.draw_noise) {
    for (int i = 0; i < m; ++i) {
      GaussianStream g(mix_key(options.noise_key, static_cast<std::uint64_t>(i)));
      for (int k = 0; k < da; ++k) {
        innovations(k, i) +=
            noise_scale / std::sqrt(precision[active[k]]) * g.next();
      }
    }
  }

  // Ensemble-space solve: with D = lambda^-1 Qbar (diagonal), A = obs
  // anomalies, the Woodbury identity gives
  //   Sigma_ty (A A^T + D)^-1 = A_theta (I + A^T D^-1 A)^-1 A^T D^-1.
  Eigen::VectorXd dinv(da);
  for (int k = 0; k < da; ++k) dinv[k] = lambda * precision[active[k]];
  const Eigen::MatrixXd weighted = dinv.asDiagonal() * anomaly;
  Eigen::MatrixXd inner = anomaly.transpose() * weighted;
  inner.diagonal().array() += 1.0;
  const Eigen::MatrixXd rhs =
      weighted.transpose() * innovations;  // A^T D^-1 N, M x M

  Eigen::LLT<Eigen::MatrixXd> llt(inner);
  Eigen::MatrixXd solved;
  if (llt.info() == Eigen::Success) {
    solved = llt.solve(rhs);
  } else {
    inner.diagonal().array() += options.ridge;
    ensemble.ridge_events += 1;
    solved = inner.ldlt().solve(rhs);
  }

  const Eigen::Matrix<double, 3, Eigen::Dynamic> delta =
      theta_anomaly * solved;  // 3 x M
  ensemble.thetas += delta.transpose();
  project_all();
}

ThetaEstimate solve(const PackState& x_k, const DemandForecast& forecast,
                    const PackParameters& params, const OpmConfig& opm_config,
                    const EnkiConfig& enki_config) {
  enki_config.validate();
  opm_config.validate();
  const int m = enki_config.particles;
  const ObservationLayout layout{params.size(), opm_config.horizon};
  const auto d = layout.dim();

  OpmConfig opm = opm_config;
  if (enki_config.loss_precision_override > 0.0)
    opm.loss_weight = enki_config.loss_precision_override;
  if (enki_config.penalty_precision_override > 0.0)
    opm.penalty_weight = enki_config.penalty_precision_override;
  const Eigen::VectorXd prec = observation_precision(layout, opm);

  const Eigen::Matrix3d prior_cov = opm.theta_prior_weight.inverse();
  Ensemble ens = init_ensemble(enki_config, opm.theta_nominal, prior_cov);
  ens.observations.resize(d, m);

  const std::vector<double> schedule =
      geometric_schedule(enki_config.max_iters, enki_config.lambda_growth);

  ThetaEstimate est;
  double budget = 1.0;
  const int threads = worker_count();
  const bool parallel = enki_config.execution == Execution::Parallel;

  for (int iter = 1; iter <= enki_config.max_iters && budget > 1e-12; ++iter) {
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (parallel)
    for (int i = 0; i < m; ++i) {
      PolicyParameters policy;
      policy.theta = ens.thetas.row(i).transpose();
      try {
        const RolloutResult r = rollout(x_k, policy, forecast, params, opm);
        ens.observations.col(i) = r.observations;
      } catch (const std::exception&) {
        // An out-of-domain trajectory is penalized, not fatal: the particle
        // gets a uniformly large observation and negligible weight.
        ens.observations.col(i).setConstant(kFailedRolloutPenalty);
      }
      sanitize_observation(ens.observations.col(i));
    }

    const Eigen::VectorXd misfits = particle_misfits(ens, prec);
    est.misfit_history.push_back(median_of(misfits));

    double lambda;
    if (enki_config.lambda_mode == LambdaMode::Adaptive) {
      lambda = select_lambda(ens, prec, budget, enki_config);
    } else {
      lambda = std::min(schedule[iter - 1], budget);
    }
    est.lambda_history.push_back(lambda);

    KalmanOptions opts;
    opts.draw_noise = true;
    opts.noise_key = mix_key(enki_config.seed, kNoiseTag + iter);
    opts.project_simplex = enki_config.project_simplex;
    kalman_update(ens, lambda, prec, opts);

    budget -= lambda;
    ens.lambda_used += lambda;
    ens.iteration = iter;
  }

  const EnsembleStats stats = ensemble_stats(ens);
  est.mean = project_to_simplex(stats.theta_mean);
  est.covariance = stats.cov_theta;
  est.iterations_run = ens.iteration;
  est.lambda_used = ens.lambda_used;
  return est;
}

}  // namespace bessopm
