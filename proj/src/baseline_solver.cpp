#include "bessopm/baseline_solver.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <string>

#include "bessopm/errors.hpp"

namespace bessopm {

namespace {

// The optimizer needs a smooth model on the whole real line; the safety
// constraints pull iterates back into the physical SoC range, so the curves
// are evaluated without the [0,1] domain restriction here.
double ocv_raw(const CellParameters& p, double q) {
  double v = 0.0;
  for (auto it = p.ocv_coeffs.rbegin(); it != p.ocv_coeffs.rend(); ++it)
    v = v * q + *it;
  return v;
}

double ocv_raw_deriv(const CellParameters& p, double q) {
  const auto& c = p.ocv_coeffs;
  double v = 0.0;
  for (int k = static_cast<int>(c.size()) - 1; k >= 1; --k)
    v = v * q + k * c[k];
  return v;
}

double res_raw(const CellParameters& p, double q) {
  return p.res_base + p.res_exp_coeff * std::exp(-p.res_exp_rate * q);
}

double res_raw_deriv(const CellParameters& p, double q) {
  return -p.res_exp_rate * p.res_exp_coeff * std::exp(-p.res_exp_rate * q);
}

// Augmented-Lagrangian term for one inequality g <= 0 with multiplier lam.
struct AlTerm {
  double value;
  double slope;
};

AlTerm al_inequality(double g, double lam, double rho) {
  const double m = lam + rho * g;
  if (m > 0.0) return {(m * m - lam * lam) / (2.0 * rho), m};
  return {-lam * lam / (2.0 * rho), 0.0};
}

// State-constraint class order inside lam_state columns.
enum StateClass {
  kTempLower = 0,
  kTempUpper,
  kSocLower,
  kSocUpper,
  kSocBandLower,
  kSocBandUpper,
  kTempBandLower,
  kTempBandUpper,
  kStateClasses
};

// Full-space transcription: z = [vec(mu) | vec(q[1..H]) | vec(T[1..H])] with
// mu an n x (H+1) block. q[0], T[0] are the fixed initial state.
struct Transcription {
  const PackState& x0;
  const DemandForecast& forecast;
  const PackParameters& params;
  const OpmConfig& cfg;
  int n;
  int H;

  Eigen::MatrixXd lam_dyn_q;    // n x H, SoC dynamics defects
  Eigen::MatrixXd lam_dyn_t;    // n x H, temperature dynamics defects
  Eigen::MatrixXd lam_state;    // (8n) x H, constraints on states t=1..H
  Eigen::MatrixXd lam_current;  // (2n) x (H+1), [lower; upper] PSR-form bounds
  Eigen::VectorXd lam_eq;       // H+1, supply-demand balance
  double rho = 10.0;

  Transcription(const PackState& x0_, const DemandForecast& fc,
                const PackParameters& p, const OpmConfig& c)
      : x0(x0_), forecast(fc), params(p), cfg(c), n(p.size()), H(c.horizon) {
    const int hcols = std::max(H, 1);
    lam_dyn_q = Eigen::MatrixXd::Zero(n, hcols);
    lam_dyn_t = Eigen::MatrixXd::Zero(n, hcols);
    lam_state = Eigen::MatrixXd::Zero(kStateClasses * n, hcols);
    lam_current = Eigen::MatrixXd::Zero(2 * n, H + 1);
    lam_eq = Eigen::VectorXd::Zero(H + 1);
  }

  int vars() const { return n * (H + 1) + 2 * n * H; }
  int mu_off() const { return 0; }
  int q_off() const { return n * (H + 1); }
  int t_off() const { return n * (H + 1) + n * H; }

  double state_q(const Eigen::VectorXd& z, int j, int t) const {
    return t == 0 ? x0.soc[j] : z[q_off() + n * (t - 1) + j];
  }
  double state_t(const Eigen::VectorXd& z, int j, int t) const {
    return t == 0 ? x0.temp[j] : z[t_off() + n * (t - 1) + j];
  }
  double mu_at(const Eigen::VectorXd& z, int j, int t) const {
    return z[mu_off() + n * t + j];
  }

  struct Eval {
    double penalized = 0.0;  // F = J + AL terms
    double loss = 0.0;       // J = sum_t mu_t^T B_t mu_t
    double viol = 0.0;       // max constraint violation incl. dynamics
  };

  Eval evaluate(const Eigen::VectorXd& z, Eigen::VectorXd* grad,
                bool update_multipliers = false) {
    Eval out;
    if (grad) grad->setZero(vars());
    auto gmu = [&](int j, int t) -> double& {
      return (*grad)[mu_off() + n * t + j];
    };
    auto gq = [&](int j, int t) -> double& {
      return (*grad)[q_off() + n * (t - 1) + j];
    };
    auto gt = [&](int j, int t) -> double& {
      return (*grad)[t_off() + n * (t - 1) + j];
    };

    for (int t = 0; t <= H; ++t) {
      const double p_t = forecast.p_out[t];
      const double p_abs = std::abs(p_t);
      const double p_eff = std::max(p_abs, cfg.p_floor);

      // cached model quantities at step t
      double loss_t = 0.0;
      Eigen::VectorXd zv(n), zpv(n), rv(n), rpv(n), wv(n);
      for (int j = 0; j < n; ++j) {
        const CellParameters& cell = params.cells[j];
        const double qj = state_q(z, j, t);
        zv[j] = ocv_raw(cell, qj);
        zpv[j] = ocv_raw_deriv(cell, qj);
        rv[j] = res_raw(cell, qj);
        rpv[j] = res_raw_deriv(cell, qj);
        wv[j] = (rv[j] + cell.converter_res) * p_t * p_t / (zv[j] * zv[j]);
        loss_t += wv[j] * mu_at(z, j, t) * mu_at(z, j, t);
      }
      out.loss += loss_t;
      out.penalized += loss_t;

      // supply-demand equality at step t
      const bool eq_active = p_abs >= cfg.p_floor;
      double de = 0.0;
      if (eq_active) {
        double mu_sum = 0.0;
        for (int j = 0; j < n; ++j) mu_sum += mu_at(z, j, t);
        const double e = mu_sum - 1.0 - loss_t / p_abs;
        out.penalized += lam_eq[t] * e + 0.5 * rho * e * e;
        out.viol = std::max(out.viol, std::abs(e));
        de = lam_eq[t] + rho * e;
        if (update_multipliers) lam_eq[t] += rho * e;
      }

      for (int j = 0; j < n; ++j) {
        const CellParameters& cell = params.cells[j];
        const double mu_jt = mu_at(z, j, t);
        const double dw = p_t * p_t *
                          (rpv[j] * zv[j] -
                           2.0 * (rv[j] + cell.converter_res) * zpv[j]) /
                          (zv[j] * zv[j] * zv[j]);
        if (grad) {
          gmu(j, t) += 2.0 * wv[j] * mu_jt;
          if (t >= 1) gq(j, t) += mu_jt * mu_jt * dw;
          if (eq_active) {
            gmu(j, t) += de * (1.0 - 2.0 * wv[j] * mu_jt / p_abs);
            if (t >= 1) gq(j, t) += de * (-mu_jt * mu_jt * dw / p_abs);
          }
        }

        // PSR-form current bounds
        const double g_lo = zv[j] * cell.current_limits.min / p_eff - mu_jt;
        const double g_hi = mu_jt - zv[j] * cell.current_limits.max / p_eff;
        out.viol = std::max({out.viol, g_lo, g_hi});
        const AlTerm lo = al_inequality(g_lo, lam_current(j, t), rho);
        const AlTerm hi = al_inequality(g_hi, lam_current(n + j, t), rho);
        out.penalized += lo.value + hi.value;
        if (grad) {
          gmu(j, t) += hi.slope - lo.slope;
          if (t >= 1)
            gq(j, t) += lo.slope * zpv[j] * cell.current_limits.min / p_eff -
                        hi.slope * zpv[j] * cell.current_limits.max / p_eff;
        }
        if (update_multipliers) {
          lam_current(j, t) = std::max(0.0, lam_current(j, t) + rho * g_lo);
          lam_current(n + j, t) =
              std::max(0.0, lam_current(n + j, t) + rho * g_hi);
        }
      }

      // state bounds and balancing bands on the state variables (t >= 1)
      if (t >= 1) {
        auto lam = lam_state.col(t - 1);
        double q_avg = 0.0, t_avg = 0.0;
        for (int j = 0; j < n; ++j) {
          q_avg += state_q(z, j, t);
          t_avg += state_t(z, j, t);
        }
        q_avg /= n;
        t_avg /= n;
        double band_q_sum = 0.0, band_t_sum = 0.0;
        for (int j = 0; j < n; ++j) {
          const CellParameters& cell = params.cells[j];
          const double qj = state_q(z, j, t);
          const double tj = state_t(z, j, t);
          const double res[kStateClasses] = {
              cell.temp_limits.min - tj,
              tj - cell.temp_limits.max,
              cell.soc_limits.min - qj,
              qj - cell.soc_limits.max,
              -(qj - q_avg) - cfg.soc_band,
              (qj - q_avg) - cfg.soc_band,
              -(tj - t_avg) - cfg.temp_band,
              (tj - t_avg) - cfg.temp_band,
          };
          AlTerm terms[kStateClasses];
          for (int c = 0; c < kStateClasses; ++c) {
            terms[c] = al_inequality(res[c], lam[c * n + j], rho);
            out.penalized += terms[c].value;
            out.viol = std::max(out.viol, res[c]);
            if (update_multipliers)
              lam[c * n + j] = std::max(0.0, lam[c * n + j] + rho * res[c]);
          }
          if (grad) {
            gt(j, t) += terms[kTempUpper].slope - terms[kTempLower].slope;
            gq(j, t) += terms[kSocUpper].slope - terms[kSocLower].slope;
            gq(j, t) += terms[kSocBandUpper].slope - terms[kSocBandLower].slope;
            gt(j, t) += terms[kTempBandUpper].slope - terms[kTempBandLower].slope;
            band_q_sum += terms[kSocBandUpper].slope - terms[kSocBandLower].slope;
            band_t_sum += terms[kTempBandUpper].slope - terms[kTempBandLower].slope;
          }
        }
        if (grad) {
          for (int j = 0; j < n; ++j) {
            gq(j, t) -= band_q_sum / n;
            gt(j, t) -= band_t_sum / n;
          }
        }
      }

      // dynamics defects tying step t to t+1
      if (t < H) {
        for (int j = 0; j < n; ++j) {
          const CellParameters& cell = params.cells[j];
          const double mu_jt = mu_at(z, j, t);
          const double c_t = p_t * cfg.dt / cell.capacity_coulombs();
          const double e_q =
              state_q(z, j, t + 1) - state_q(z, j, t) + c_t * mu_jt / zv[j];
          const double k_th = cfg.dt / cell.heat_capacity;
          const double heat =
              rv[j] * mu_jt * mu_jt * p_t * p_t / (zv[j] * zv[j]);
          const double e_t =
              state_t(z, j, t + 1) - state_t(z, j, t) -
              k_th * (heat - (state_t(z, j, t) - cell.env_temp) /
                                 cell.conv_resistance);
          out.penalized += lam_dyn_q(j, t) * e_q + 0.5 * rho * e_q * e_q;
          out.penalized += lam_dyn_t(j, t) * e_t + 0.5 * rho * e_t * e_t;
          out.viol = std::max({out.viol, std::abs(e_q), std::abs(e_t)});
          const double deq = lam_dyn_q(j, t) + rho * e_q;
          const double det = lam_dyn_t(j, t) + rho * e_t;
          if (update_multipliers) {
            lam_dyn_q(j, t) += rho * e_q;
            lam_dyn_t(j, t) += rho * e_t;
          }
          if (grad) {
            gq(j, t + 1) += deq;
            gmu(j, t) += deq * c_t / zv[j];
            if (t >= 1) gq(j, t) += deq * (-1.0 - c_t * mu_jt * zpv[j] /
                                                      (zv[j] * zv[j]));
            gt(j, t + 1) += det;
            gmu(j, t) +=
                det * (-k_th * 2.0 * mu_jt * p_t * p_t * rv[j] /
                       (zv[j] * zv[j]));
            if (t >= 1) {
              gq(j, t) += det * (-k_th * mu_jt * mu_jt * p_t * p_t *
                                 (rpv[j] * zv[j] - 2.0 * rv[j] * zpv[j]) /
                                 (zv[j] * zv[j] * zv[j]));
              gt(j, t) += det * (-1.0 + k_th / cell.conv_resistance);
            }
          }
        }
      }
    }
    return out;
  }
};

struct LbfgsOutcome {
  double value = 0.0;
  double grad_norm = 0.0;
  bool stationary = false;
  bool stalled = false;
  long long evaluations = 0;
};

// Two-loop L-BFGS with Armijo backtracking on the penalized objective.
LbfgsOutcome lbfgs_minimize(Transcription& prob, Eigen::VectorXd& x,
                            const BaselineOptions& opt) {
  using Vec = Eigen::VectorXd;

  LbfgsOutcome out;
  Vec g(x.size());
  double f = prob.evaluate(x, &g).penalized;
  ++out.evaluations;

  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int it = 0; it < opt.max_inner; ++it) {
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    out.value = f;
    out.grad_norm = gnorm;
    if (gnorm <= opt.grad_tol * (1.0 + std::abs(f))) {
      out.stationary = true;
      return out;
    }

    // two-loop recursion
    Vec dir = -g;
    std::vector<double> alpha(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(dir);
      dir -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) {
      const Vec& s = s_hist.back();
      const Vec& y = y_hist.back();
      dir *= s.dot(y) / y.squaredNorm();
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (alpha[k] - beta) * s_hist[k];
    }
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      dir = -g;
      slope = -g.squaredNorm();
    }

    const Vec x_old = x;
    const Vec g_old = g;
    const double f_old = f;
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x = x_old + step * dir;
      Eigen::VectorXd* gptr = &g;
      f = prob.evaluate(x, gptr).penalized;
      ++out.evaluations;
      if (std::isfinite(f) && f <= f_old + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      x = x_old;
      f = prob.evaluate(x, &g).penalized;
      ++out.evaluations;
      out.value = f;
      out.grad_norm = g.lpNorm<Eigen::Infinity>();
      out.stalled = true;
      return out;
    }

    Vec s = x - x_old;
    Vec y = g - g_old;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.lbfgs_memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
  }
  out.value = f;
  out.grad_norm = g.lpNorm<Eigen::Infinity>();
  return out;
}

}  // namespace

int baseline_variable_count(int n_cells, int horizon) {
  return n_cells * (horizon + 1) + 2 * n_cells * horizon;
}

Eigen::VectorXd baseline_pack_variables(const Eigen::MatrixXd& mu,
                                        const PackState& x_k,
                                        const DemandForecast& forecast,
                                        const PackParameters& params,
                                        const OpmConfig& opm_config) {
  const int n = params.size();
  const int H = opm_config.horizon;
  Eigen::VectorXd z(baseline_variable_count(n, H));
  for (int t = 0; t <= H; ++t)
    for (int j = 0; j < n; ++j) z[n * t + j] = mu(j, t);
  Eigen::VectorXd q = x_k.soc, temp = x_k.temp;
  const int q_off = n * (H + 1);
  const int t_off = q_off + n * H;
  for (int t = 0; t < H; ++t) {
    const double p_t = forecast.p_out[t];
    for (int j = 0; j < n; ++j) {
      const CellParameters& cell = params.cells[j];
      const double zj = ocv_raw(cell, q[j]);
      const double heat = res_raw(cell, q[j]) * mu(j, t) * mu(j, t) * p_t * p_t /
                          (zj * zj);
      const double q_next =
          q[j] - p_t * opm_config.dt / cell.capacity_coulombs() * mu(j, t) / zj;
      const double t_next =
          temp[j] + opm_config.dt / cell.heat_capacity *
                        (heat - (temp[j] - cell.env_temp) / cell.conv_resistance);
      z[q_off + n * t + j] = q_next;
      z[t_off + n * t + j] = t_next;
      q[j] = q_next;
      temp[j] = t_next;
    }
  }
  return z;
}

BaselineResult solve_cell_level(const PackState& x_k,
                                const DemandForecast& forecast,
                                const PackParameters& params,
                                const OpmConfig& opm_config,
                                const BaselineOptions& options) {
  const int n = params.size();
  const int H = opm_config.horizon;
  if (static_cast<long long>(n) * H > options.guard_nh)
    throw ConfigError("cell-level baseline guard exceeded: n*H = " +
                      std::to_string(static_cast<long long>(n) * H));
  if (forecast.steps() != H + 1)
    throw ConfigError("forecast length must equal horizon+1");

  const auto start = std::chrono::steady_clock::now();

  Transcription prob(x_k, forecast, params, opm_config);
  prob.rho = options.rho_init;

  const Eigen::MatrixXd mu0 = Eigen::MatrixXd::Constant(n, H + 1, 1.0 / n);
  Eigen::VectorXd z =
      baseline_pack_variables(mu0, x_k, forecast, params, opm_config);

  BaselineResult result;
  double prev_viol = std::numeric_limits<double>::infinity();
  bool stationary = false;
  for (int outer = 0; outer < options.max_outer; ++outer) {
    const LbfgsOutcome inner = lbfgs_minimize(prob, z, options);
    result.evaluations += inner.evaluations;
    result.grad_norm = inner.grad_norm;
    result.outer_iters = outer + 1;
    stationary = inner.stationary || inner.stalled;

    const double viol = prob.evaluate(z, nullptr, /*update_multipliers=*/true).viol;
    result.constraint_viol = viol;
    // a stalled line search at feasibility is the double-precision floor of
    // the penalized objective; treat it as converged
    if (viol <= options.constraint_tol && (inner.stationary || inner.stalled)) {
      result.status = BaselineStatus::Converged;
      break;
    }
    if (viol > 0.25 * prev_viol)
      prob.rho = std::min(prob.rho * options.rho_growth, options.rho_max);
    prev_viol = viol;
    result.status = BaselineStatus::IterationLimit;
  }
  if (result.status != BaselineStatus::Converged) {
    if (result.constraint_viol > options.constraint_tol * 10.0) {
      result.status = BaselineStatus::Infeasible;
    } else if (stationary) {
      result.status = BaselineStatus::Stalled;
    }
  }

  result.mu.resize(n, H + 1);
  for (int t = 0; t <= H; ++t)
    for (int j = 0; j < n; ++j) result.mu(j, t) = z[n * t + j];
  Eigen::VectorXd grad(z.size());
  const auto final_eval = prob.evaluate(z, &grad);
  result.cost = final_eval.loss;
  result.grad_norm = grad.lpNorm<Eigen::Infinity>();

  result.runtime_s = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - start)
                         .count();
  return result;
}

double penalized_objective(const Eigen::VectorXd& z, const PackState& x_k,
                           const DemandForecast& forecast,
                           const PackParameters& params,
                           const OpmConfig& opm_config, double rho,
                           Eigen::VectorXd* grad) {
  Transcription prob(x_k, forecast, params, opm_config);
  prob.rho = rho;
  return prob.evaluate(z, grad).penalized;
}

GridOracleResult grid_oracle(const PackState& x_k, const DemandForecast& forecast,
                             const PackParameters& params,
                             const OpmConfig& opm_config,
                             const PolicyParameters& policy, double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("grid step must be in (0,1]");
  const int k = static_cast<int>(std::lround(1.0 / step));
  if (std::abs(k * step - 1.0) > 1e-9)
    throw ConfigError("grid step must divide the simplex");

  GridOracleResult out;
  out.cost_best = std::numeric_limits<double>::infinity();
  std::vector<std::pair<Eigen::Vector3d, double>> all;
  all.reserve(static_cast<std::size_t>(k + 1) * (k + 2) / 2);
  PolicyParameters p = policy;
  for (int i1 = 0; i1 <= k; ++i1) {
    for (int i2 = 0; i2 + i1 <= k; ++i2) {
      Eigen::Vector3d theta(i1 * step, i2 * step,
                            std::max(0.0, 1.0 - i1 * step - i2 * step));
      p.theta = theta;
      const double cost = mhe_cost(p, x_k, forecast, params, opm_config);
      ++out.evaluated;
      all.emplace_back(theta, cost);
      if (cost < out.cost_best) {
        out.cost_best = cost;
        out.theta_best = theta;
      }
    }
  }
  const double tie = out.cost_best + 1e-9 * std::abs(out.cost_best) + 1e-12;
  for (const auto& [theta, cost] : all)
    if (cost <= tie) out.near_optimal.push_back(theta);
  return out;
}

}  // namespace bessopm
