#pragma once

#include <Eigen/Dense>

#include "bessopm/cell_model.hpp"

namespace bessopm {

enum class Direction { Discharging, Charging };

// Three-component policy weights on the probability simplex plus the
// exponents controlling how strongly SoC and temperature imbalance drive the
// power split.
struct PolicyParameters {
  Eigen::Vector3d theta{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double xi_q = 8.0;
  double xi_t = 12.0;
  // Evaluate the feature functions exactly as the per-term ratio sums instead
  // of the normalized weights. Kept for fidelity experiments; the normalized
  // form is the default (it is the only one whose PSRs sum to 1 and give 1/n
  // for identical cells).
  bool literal_phi = false;

  void validate() const;
};

// Clamp components to >= 1e-6 and renormalize to sum 1. This is the single
// simplex convention used everywhere a solver can push theta off the simplex.
Eigen::Vector3d project_to_simplex(const Eigen::Vector3d& theta);

// Row j = [phi_q_j, phi_T_j, phi_R_j]; in the normalized form each column
// sums to 1 across cells.
struct FeatureMatrix {
  Eigen::Matrix<double, Eigen::Dynamic, 3> phi;
  Direction direction = Direction::Discharging;

  int size() const { return static_cast<int>(phi.rows()); }
};

// SoC feature column. Normalized form: discharging weights q^xi (high SoC
// discharges harder), charging weights q^-xi.
Eigen::VectorXd phi_soc(const Eigen::VectorXd& soc, double xi_q, Direction dir,
                        bool literal = false);

// Temperature feature column, weights T^-xi_t: cooler cells get more power.
Eigen::VectorXd phi_temp(const Eigen::VectorXd& temp, double xi_t,
                         bool literal = false);

// Resistance feature column, harmonic weights 1/(R_j + R_C).
Eigen::VectorXd phi_res(const Eigen::VectorXd& res, double converter_res,
                        bool literal = false);

// Assemble all three columns at the given state. Direction is discharging iff
// p_out >= 0 (the tie at zero power is irrelevant downstream).
FeatureMatrix features(const PackState& state, const PackParameters& params,
                       double p_out, const PolicyParameters& policy);

// Same with the per-cell resistances R_j(q_j) already evaluated (hot path for
// rollouts, which need them anyway).
FeatureMatrix features_with_res(const Eigen::VectorXd& soc,
                                const Eigen::VectorXd& temp,
                                const Eigen::VectorXd& res, double converter_res,
                                double p_out, const PolicyParameters& policy);

// mu = Phi * theta.
Eigen::VectorXd psr(const FeatureMatrix& features, const Eigen::Vector3d& theta);

}  // namespace bessopm
