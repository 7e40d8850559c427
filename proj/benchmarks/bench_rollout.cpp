// Throughput benchmark for the solver's data-parallel core: batches of
// horizon rollouts (the EnKI inner loop) executed serially and with the
// OpenMP path, plus one full solve in each mode.
#include <chrono>
#include <cstdlib>
#include <iostream>

#include "bessopm/compare.hpp"
#include "bessopm/enki_solver.hpp"

using namespace bessopm;

namespace {

double time_rollout_batch(const PackState& x0, const DemandForecast& forecast,
                          const PackParameters& pack, const OpmConfig& opm,
                          const Eigen::MatrixXd& thetas, bool parallel,
                          int rounds) {
  const int m = static_cast<int>(thetas.rows());
  const auto t0 = std::chrono::steady_clock::now();
  double sink = 0.0;
  for (int r = 0; r < rounds; ++r) {
#pragma omp parallel for schedule(dynamic) reduction(+ : sink) if (parallel)
    for (int i = 0; i < m; ++i) {
      PolicyParameters policy;
      policy.theta = thetas.row(i).transpose();
      sink += rollout(x0, policy, forecast, pack, opm).observations.sum();
    }
  }
  if (sink == 42.0) std::cerr << "";  // keep the work alive
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
             .count() /
         rounds;
}

}  // namespace

int main(int argc, char** argv) {
  const int n = argc > 1 ? std::atoi(argv[1]) : 200;
  const int m = argc > 2 ? std::atoi(argv[2]) : 100;
  const int rounds = argc > 3 ? std::atoi(argv[3]) : 10;

  Scenario sc = comparison_scenario(n, 10, m, 7);
  const PackParameters pack = sc.build_pack();
  const PackState x0 = sc.initial_state();
  DemandForecast forecast;
  forecast.p_out =
      Eigen::VectorXd::Constant(sc.opm.horizon + 1, sc.demand.nominal);

  EnkiConfig enki = sc.enki;
  enki.particles = m;
  const Ensemble ens =
      init_ensemble(enki, sc.opm.theta_nominal, sc.opm.theta_prior_weight.inverse());

  std::cout << "pack n=" << n << ", particles=" << m << ", horizon="
            << sc.opm.horizon << ", workers=" << worker_count() << "\n\n";

  // warm-up pass so neither mode pays the cold-cache cost
  time_rollout_batch(x0, forecast, pack, sc.opm, ens.thetas, false, 1);

  const double serial = time_rollout_batch(x0, forecast, pack, sc.opm,
                                           ens.thetas, false, rounds);
  const double parallel = time_rollout_batch(x0, forecast, pack, sc.opm,
                                             ens.thetas, true, rounds);
  std::cout << "rollout batch (" << m << " particles)\n"
            << "  serial   " << serial * 1e3 << " ms\n"
            << "  openmp   " << parallel * 1e3 << " ms\n"
            << "  speedup  " << serial / parallel << "x\n\n";

  for (const Execution mode : {Execution::Serial, Execution::Parallel}) {
    EnkiConfig cfg = enki;
    cfg.execution = mode;
    const auto t0 = std::chrono::steady_clock::now();
    const ThetaEstimate est = solve(x0, forecast, pack, sc.opm, cfg);
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::cout << "full solve ("
              << (mode == Execution::Serial ? "serial" : "openmp")
              << "): " << dt * 1e3 << " ms, " << est.iterations_run
              << " iterations\n";
  }
  return 0;
}
