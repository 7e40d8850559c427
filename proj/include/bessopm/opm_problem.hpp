#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "bessopm/cell_model.hpp"
#include "bessopm/psr_policy.hpp"

namespace bessopm {

struct BarrierParams {
  double alpha = 1.0;
  double beta = 50.0;
};

// Cost and constraint configuration for one receding-horizon problem.
struct OpmConfig {
  int horizon = 10;            // H: steps beyond the current one
  double dt = 1.0;             // seconds
  double soc_band = 0.005;     // permissible |q_j - q_avg|
  double temp_band = 1.0;      // permissible |T_j - T_avg|, kelvin
  Eigen::Vector3d theta_nominal{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  Eigen::Matrix3d theta_prior_weight = 25.0 * Eigen::Matrix3d::Identity();
  // Diagonal observation weight Q: one scalar for the three loss entries and
  // one for every penalty entry. The loss default 1/(2 kW)^2 normalizes the
  // loss block at the nominal Table-style operating point; scenario loading
  // rescales it to the profile's nominal power unless set explicitly.
  double loss_weight = 2.5e-7;
  double penalty_weight = 1.0;
  // Per-family multipliers on penalty_weight for the five inequality classes
  // [temp bounds, soc bounds, current bounds, soc band, temp band]; lets a
  // scenario weight the constraint families of the diagonal Q independently.
  std::array<double, 5> penalty_class_scale{1.0, 1.0, 1.0, 1.0, 1.0};
  BarrierParams barrier_g{1.0, 50.0};
  BarrierParams barrier_e{1.0, 2.0};  // beta_e must be an even positive integer
  // Below this |p_out| the current bounds are evaluated at p_floor and the
  // supply-demand equality is skipped (no demand, nothing to balance).
  double p_floor = 1.0;  // watts
  // Replace the piecewise inequality barrier by softplus everywhere,
  // removing the ln2/alpha jump at 0+.
  bool smooth_barrier = false;

  void validate() const;
};

// Predicted output power per step over [k, k+H]: length horizon+1.
struct DemandForecast {
  Eigen::VectorXd p_out;

  int steps() const { return static_cast<int>(p_out.size()); }
};

// Index arithmetic for the stacked observation vector. Per step the layout is
//   [ loss block (3) |
//     T lower (n), T upper (n), q lower (n), q upper (n),
//     i lower (n), i upper (n), q-band lower (n), q-band upper (n),
//     T-band lower (n), T-band upper (n) |
//     eq: 1^T theta - 1, supply-demand ]
// and steps t = 0..H are stacked in order. Every entry is recoverable from
// its offset via decode().
struct ObservationLayout {
  int n_cells = 0;
  int horizon = 0;

  static constexpr int kLossEntries = 3;
  static constexpr int kIneqClasses = 10;
  static constexpr int kEqEntries = 2;

  enum class Block { Loss, Inequality, Equality };

  // Inequality class order; Lower means the residual of the min bound.
  enum class IneqClass {
    TempLower = 0,
    TempUpper,
    SocLower,
    SocUpper,
    CurrentLower,
    CurrentUpper,
    SocBandLower,
    SocBandUpper,
    TempBandLower,
    TempBandUpper,
  };

  struct Entry {
    int step = 0;
    Block block = Block::Loss;
    int loss_index = 0;   // valid for Loss
    IneqClass ineq_class = IneqClass::TempLower;
    int cell = 0;         // valid for Inequality
    int eq_index = 0;     // valid for Equality
  };

  int per_step() const { return kLossEntries + kIneqClasses * n_cells + kEqEntries; }
  int dim() const { return (horizon + 1) * per_step(); }
  int step_offset(int step) const { return step * per_step(); }
  int loss_offset(int step) const { return step_offset(step); }
  int ineq_offset(int step) const { return step_offset(step) + kLossEntries; }
  int ineq_offset(int step, IneqClass c) const {
    return ineq_offset(step) + static_cast<int>(c) * n_cells;
  }
  int eq_offset(int step) const {
    return ineq_offset(step) + kIneqClasses * n_cells;
  }
  Entry decode(int offset) const;
};

// One step's observation: the loss block sqrt(Phi^T B Phi) theta and the
// element-wise barrier outputs of the inequality and equality residuals.
struct VirtualObservation {
  Eigen::Vector3d loss_block;
  Eigen::VectorXd ineq_block;  // 10 n entries, layout as above
  Eigen::Vector2d eq_block;
};

struct RolloutResult {
  std::vector<PackState> trajectory;  // states at t = 0..H
  Eigen::VectorXd observations;       // stacked, ObservationLayout order
  bool any_clamped = false;
};

// Diagonal of the loss matrix B: B_jj = (R_j(q_j)+R_C) p_out^2 / ocv_j^2.
Eigen::VectorXd loss_diag(const PackState& state, const PackParameters& params,
                          double p_out);

// Total loss L = theta^T Phi^T B Phi theta = sum_j B_jj mu_j^2.
double total_loss(const Eigen::Vector3d& theta, const FeatureMatrix& features,
                  const Eigen::VectorXd& loss_diag);

// Stacked inequality residuals (<= 0 iff satisfied), ObservationLayout order.
Eigen::VectorXd inequality_residuals(const PackState& state,
                                     const Eigen::Vector3d& theta,
                                     const FeatureMatrix& features,
                                     const PackParameters& params, double p_out,
                                     const OpmConfig& config);

// [1^T theta - 1, 1^T Phi theta - 1 - L/|p_out|]; the second entry is zero
// when |p_out| < p_floor.
Eigen::Vector2d equality_residuals(const Eigen::Vector3d& theta,
                                   const FeatureMatrix& features,
                                   const Eigen::VectorXd& loss_diag,
                                   double p_out, const OpmConfig& config);

// Inequality barrier: 0 for x <= 0, softplus(beta x)/alpha for x > 0 (with the
// documented ln2/alpha jump at 0+). Guards the exponential with the linear
// asymptote for large arguments.
double barrier_g(double x, double alpha, double beta);

// Softplus on the whole line; selected by OpmConfig::smooth_barrier.
double barrier_g_smooth(double x, double alpha, double beta);

// Equality penalty x^beta_e / alpha_e; beta_e must be an even positive integer.
double barrier_e(double x, double alpha, double beta);

// Evaluate the full observation map h(x, theta) at one state.
VirtualObservation observe(const PackState& state,
                           const PolicyParameters& policy,
                           const PackParameters& params, double p_out,
                           const OpmConfig& config);

// Deterministic horizon rollout: propagate the pack with mu_t = Phi(x_t) theta
// recomputed each step, stacking observe() over t = 0..H. Noise injection is
// the caller's job.
RolloutResult rollout(const PackState& x0, const PolicyParameters& policy,
                      const DemandForecast& forecast,
                      const PackParameters& params, const OpmConfig& config);

// Per-entry diagonal of Q for the stacked observation.
Eigen::VectorXd observation_precision(const ObservationLayout& layout,
                                      const OpmConfig& config);

// Noise-free MHE cost sum_t h_t^T Q h_t + (theta - theta_bar)^T R (theta -
// theta_bar); the estimation-side twin of the control objective and the
// grid-search oracle's objective.
double mhe_cost(const PolicyParameters& policy, const PackState& x0,
                const DemandForecast& forecast, const PackParameters& params,
                const OpmConfig& config);

}  // namespace bessopm
