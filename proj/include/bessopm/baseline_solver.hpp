#pragma once

#include <Eigen/Dense>
#include <vector>

#include "bessopm/opm_problem.hpp"

namespace bessopm {

enum class BaselineStatus { Converged, IterationLimit, Stalled, Infeasible };

struct BaselineOptions {
  int max_outer = 30;       // augmented-Lagrangian multiplier updates
  int max_inner = 4000;     // L-BFGS iterations per outer pass
  int lbfgs_memory = 10;
  // Oracle-grade tolerances: the baseline doubles as the small-n quality
  // reference, so it converges tightly by default.
  // Inner stationarity: stop when |grad|_inf <= grad_tol * (1 + |F|).
  double grad_tol = 1e-8;
  double constraint_tol = 1e-8;
  double rho_init = 10.0;
  double rho_growth = 5.0;
  double rho_max = 1e8;
  long long guard_nh = 10000;  // refuse problems with n*H beyond this
};

struct BaselineResult {
  Eigen::MatrixXd mu;  // n x (H+1), column t = power-sharing ratios at step t
  double cost = 0.0;   // sum_t mu_t^T B_t mu_t at the returned iterate
  double runtime_s = 0.0;
  BaselineStatus status = BaselineStatus::IterationLimit;
  double grad_norm = 0.0;        // |grad F|_inf of the final penalized problem
  double constraint_viol = 0.0;  // max violation incl. dynamics defects
  int outer_iters = 0;
  long long evaluations = 0;  // penalized objective/gradient evaluations
};

// Direct full-space transcription of the cell-level receding-horizon problem:
// the decision vector stacks the per-cell power-sharing ratios over the
// horizon and the per-cell state trajectories, with the discretized dynamics
// entering as equality constraints. An augmented-Lagrangian outer loop wraps
// an L-BFGS inner solver with analytic gradients. Problem size:
// n(H+1) + 2nH variables, 2nH dynamics equalities, H+1 supply-demand
// equalities, 8nH + 2n(H+1) inequalities.
BaselineResult solve_cell_level(const PackState& x_k,
                                const DemandForecast& forecast,
                                const PackParameters& params,
                                const OpmConfig& opm_config,
                                const BaselineOptions& options = {});

// Decision-vector layout helpers: z = [vec(mu) | vec(q[1..H]) | vec(T[1..H])].
int baseline_variable_count(int n_cells, int horizon);

// Assemble a decision vector from a PSR trajectory, filling the state block
// by forward simulation (zero dynamics defect).
Eigen::VectorXd baseline_pack_variables(const Eigen::MatrixXd& mu,
                                        const PackState& x_k,
                                        const DemandForecast& forecast,
                                        const PackParameters& params,
                                        const OpmConfig& opm_config);

// Penalized objective and analytic gradient at one decision vector, with zero
// multipliers and the given penalty weight. Exposed for finite-difference
// verification of the gradients.
double penalized_objective(const Eigen::VectorXd& z, const PackState& x_k,
                           const DemandForecast& forecast,
                           const PackParameters& params,
                           const OpmConfig& opm_config, double rho,
                           Eigen::VectorXd* grad);

struct GridOracleResult {
  Eigen::Vector3d theta_best;
  double cost_best = 0.0;
  long long evaluated = 0;
  // All grid points within relative tie tolerance of the best cost.
  std::vector<Eigen::Vector3d> near_optimal;
};

// Exhaustive evaluation of mhe_cost over the discretized 2-simplex with the
// given step (which must divide 1). Brute-force quality standard for the
// ensemble solver.
GridOracleResult grid_oracle(const PackState& x_k, const DemandForecast& forecast,
                             const PackParameters& params,
                             const OpmConfig& opm_config,
                             const PolicyParameters& policy, double step);

}  // namespace bessopm
