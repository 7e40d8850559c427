#include "bessopm/psr_policy.hpp"

#include <cmath>
#include <string>

#include "bessopm/errors.hpp"

namespace bessopm {

namespace {

// pow with a fast path for small integral exponents (xi_q=8, xi_t=12 in the
// standard configuration; the policy is evaluated in the solver hot loop).
double ratio_pow(double base, double e) {
  const int n = static_cast<int>(e);
  if (e == static_cast<double>(n) && n >= 0 && n <= 64) {
    double r = 1.0;
    double b = base;
    int k = n;
    while (k > 0) {
      if (k & 1) r *= b;
      b *= b;
      k >>= 1;
    }
    return r;
  }
  return std::pow(base, e);
}

Eigen::VectorXd normalize(Eigen::VectorXd w) {
  const double s = w.sum();
  return w / s;
}

}  // namespace

void PolicyParameters::validate() const {
  if (!(xi_q > 0.0)) throw ConfigError("xi_q must be > 0");
  if (!(xi_t > 0.0)) throw ConfigError("xi_t must be > 0");
  if (std::abs(theta.sum() - 1.0) > 1e-9)
    throw ConfigError("theta must sum to 1");
  for (int k = 0; k < 3; ++k) {
    if (!(theta[k] >= 0.0 && theta[k] <= 1.0))
      throw ConfigError("theta components must lie in [0,1]");
  }
}

Eigen::Vector3d project_to_simplex(const Eigen::Vector3d& theta) {
  Eigen::Vector3d t = theta.cwiseMax(1e-6);
  return t / t.sum();
}

Eigen::VectorXd phi_soc(const Eigen::VectorXd& soc, double xi_q, Direction dir,
                        bool literal) {
  const int n = static_cast<int>(soc.size());
  if ((soc.array() <= 0.0).any())
    throw std::domain_error("phi_soc requires all soc > 0");
  Eigen::VectorXd w(n);
  if (dir == Direction::Discharging) {
    // weights q^xi; evaluate as (q/q_max)^xi so large exponents cannot
    // overflow and common scale factors cancel exactly
    const double ref = soc.maxCoeff();
    for (int j = 0; j < n; ++j) w[j] = ratio_pow(soc[j] / ref, xi_q);
    if (literal) {
      const double s = w.sum();
      for (int j = 0; j < n; ++j) w[j] = s / w[j];
      return w;
    }
  } else {
    // charging: weights q^-xi
    const double ref = soc.minCoeff();
    for (int j = 0; j < n; ++j) w[j] = ratio_pow(ref / soc[j], xi_q);
    if (literal) {
      const double s = w.sum();
      for (int j = 0; j < n; ++j) w[j] = s / w[j];
      return w;
    }
  }
  return normalize(std::move(w));
}

Eigen::VectorXd phi_temp(const Eigen::VectorXd& temp, double xi_t,
                         bool literal) {
  const int n = static_cast<int>(temp.size());
  if ((temp.array() <= 0.0).any())
    throw std::domain_error("phi_temp requires all temperatures > 0");
  const double ref = temp.minCoeff();
  Eigen::VectorXd w(n);
  for (int j = 0; j < n; ++j) w[j] = ratio_pow(ref / temp[j], xi_t);
  if (literal) {
    const double s = w.sum();
    for (int j = 0; j < n; ++j) w[j] = s / w[j];
    return w;
  }
  return normalize(std::move(w));
}

Eigen::VectorXd phi_res(const Eigen::VectorXd& res, double converter_res,
                        bool literal) {
  const int n = static_cast<int>(res.size());
  Eigen::VectorXd w(n);
  for (int j = 0; j < n; ++j) {
    const double total = res[j] + converter_res;
    if (!(total > 0.0))
      throw std::domain_error("phi_res requires R_j + R_C > 0");
    w[j] = 1.0 / total;
  }
  // The printed form already carries the outer inverse, so the literal and
  // normalized variants coincide for the resistance column.
  (void)literal;
  return normalize(std::move(w));
}

FeatureMatrix features(const PackState& state, const PackParameters& params,
                       double p_out, const PolicyParameters& policy) {
  const int n = params.size();
  Eigen::VectorXd res(n);
  for (int j = 0; j < n; ++j) res[j] = resistance(params.cells[j], state.soc[j]);
  // Converter resistance is a per-module parameter; the feature uses cell 0's
  // value as they are identical within one pack configuration.
  return features_with_res(state.soc, state.temp, res,
                           params.cells[0].converter_res, p_out, policy);
}

FeatureMatrix features_with_res(const Eigen::VectorXd& soc,
                                const Eigen::VectorXd& temp,
                                const Eigen::VectorXd& res, double converter_res,
                                double p_out, const PolicyParameters& policy) {
  FeatureMatrix f;
  f.direction = p_out >= 0.0 ? Direction::Discharging : Direction::Charging;
  f.phi.resize(soc.size(), 3);
  f.phi.col(0) = phi_soc(soc, policy.xi_q, f.direction, policy.literal_phi);
  f.phi.col(1) = phi_temp(temp, policy.xi_t, policy.literal_phi);
  f.phi.col(2) = phi_res(res, converter_res, policy.literal_phi);
  return f;
}

Eigen::VectorXd psr(const FeatureMatrix& features, const Eigen::Vector3d& theta) {
  return features.phi * theta;
}

}  // namespace bessopm
