#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "bessopm/opm_problem.hpp"

namespace bessopm {

enum class LambdaMode { Adaptive, FixedGeometric };
enum class Execution { Serial, Parallel };

struct EnkiConfig {
  int particles = 50;
  int max_iters = 20;
  std::uint64_t seed = 0;
  LambdaMode lambda_mode = LambdaMode::Adaptive;
  // Adaptive mode bisects the tempering step so the effective sample size of
  // the misfit weights lands at ess_target * particles.
  double ess_target = 0.5;
  // Fixed mode uses the geometric schedule lambda_l ~ growth^l normalized to
  // a unit budget.
  double lambda_growth = 1.5;
  bool project_simplex = true;
  Execution execution = Execution::Parallel;
  // Optional overrides for the observation precision used for noise and
  // misfits; 0 selects the OpmConfig weights.
  double loss_precision_override = 0.0;
  double penalty_precision_override = 0.0;

  void validate() const;
};

// Particle system at one tempering iteration. Observations hold the clean
// (noise-free) rollout outputs, one column per particle; observation noise
// enters the Kalman innovation so that the sample covariance estimates the
// model-induced spread only.
struct Ensemble {
  Eigen::Matrix<double, Eigen::Dynamic, 3> thetas;  // M x 3
  Eigen::MatrixXd observations;                     // d x M
  int iteration = 0;
  double lambda_used = 0.0;
  int ridge_events = 0;  // times the inner solve needed regularization

  int particles() const { return static_cast<int>(thetas.rows()); }
};

struct EnsembleStats {
  Eigen::Vector3d theta_mean;
  Eigen::VectorXd obs_mean;
  Eigen::Matrix3d cov_theta;
  // Anomalies scaled by 1/sqrt(M-1): covariances are plain products of these.
  Eigen::Matrix<double, 3, Eigen::Dynamic> theta_anomaly;  // 3 x M
  Eigen::MatrixXd obs_anomaly;                             // d x M

  // Dense covariances; only sensible for small observation dimensions.
  Eigen::MatrixXd obs_covariance() const { return obs_anomaly * obs_anomaly.transpose(); }
  Eigen::MatrixXd cross_covariance() const { return theta_anomaly * obs_anomaly.transpose(); }
};

struct ThetaEstimate {
  Eigen::Vector3d mean;
  Eigen::Matrix3d covariance;
  int iterations_run = 0;
  double lambda_used = 0.0;
  std::vector<double> misfit_history;  // median misfit per iteration
  std::vector<double> lambda_history;
};

// Draw M particles from N(theta_nominal, prior_cov) and clamp/renormalize to
// the simplex. Deterministic given the config seed.
Ensemble init_ensemble(const EnkiConfig& config,
                       const Eigen::Vector3d& theta_nominal,
                       const Eigen::Matrix3d& prior_cov);

EnsembleStats ensemble_stats(const Ensemble& ensemble);

// Per-particle data misfits 0.5 * Y_i^T diag(precision) Y_i.
Eigen::VectorXd particle_misfits(const Ensemble& ensemble,
                                 const Eigen::VectorXd& precision);

// Effective sample size of weights exp(-lambda * misfit).
double effective_sample_size(const Eigen::VectorXd& misfits, double lambda);

// Bisection on lambda in (0, remaining_budget] until the ESS hits
// ess_target * M within 1%; returns the budget when even the full step keeps
// the ESS above target.
double select_lambda(const Ensemble& ensemble, const Eigen::VectorXd& precision,
                     double remaining_budget, const EnkiConfig& config);

struct KalmanOptions {
  // Base observation perturbations ~ N(0, diag(1/precision)), one column per
  // particle; the update scales them by lambda^-1/2. Null means no
  // perturbation (deterministic update).
  const Eigen::MatrixXd* noise = nullptr;
  // Alternative to an explicit matrix: draw the perturbations internally for
  // the rows that matter, from per-particle streams keyed off noise_key.
  bool draw_noise = false;
  std::uint64_t noise_key = 0;
  // Observed data vector; null means zeros (the virtual-optimality target).
  const Eigen::VectorXd* y_obs = nullptr;
  double ridge = 1e-10;
  bool project_simplex = true;
};

// Tempered ensemble Kalman update
//   theta_i += Sigma_ty (Sigma_y + lambda^-1 Qbar)^-1 (y_obs + lambda^-1/2 e_i - Y_i)
// computed in ensemble space through the M x M inner system so no d x d
// matrix is ever formed. Observation rows that are constant across the
// ensemble have zero anomaly and provably cannot influence the update, so the
// solve is restricted to the active rows (exact, and what keeps the cost
// proportional to the number of responsive constraints rather than the full
// stacked dimension).
void kalman_update(Ensemble& ensemble, double lambda,
                   const Eigen::VectorXd& precision,
                   const KalmanOptions& options = {});

// Full tempered EnKI loop on the receding-horizon problem: per-particle
// rollouts, adaptive tempering, ensemble-space Kalman updates, stopping at
// max_iters or once the tempering budget sum(lambda) reaches 1.
ThetaEstimate solve(const PackState& x_k, const DemandForecast& forecast,
                    const PackParameters& params, const OpmConfig& opm_config,
                    const EnkiConfig& enki_config);

// Worker cap honoring the BESS_OPM_THREADS environment variable.
int worker_count();

}  // namespace bessopm
