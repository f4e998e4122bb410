// Holds hover at the box center under Dryden wind with the adaptive tube
// controller and prints how the tube shrinks as the disturbance set adapts.
#include <cstdio>

#include "pimltube/bench/runner.hpp"

using namespace pimltube;

int main() {
  bench::ExperimentConfig cfg;
  cfg.duration = 5.0;
  cfg.burn_in = 1.0;
  cfg.offline_train = 0;
  cfg.offline_test = 0;

  const bench::RunLog log =
      bench::run_closed_loop(cfg, bench::ControllerKind::kProposed, bench::TrajectoryKind::kHover, 1, {});

  std::printf("%6s %10s %10s %10s %12s\n", "t", "z", "thrust", "max_tube", "max_dbar");
  for (const auto& r : log.records) {
    if (r.k % 50 != 0) continue;
    std::printf("%6.2f %10.5f %10.5f %10.5f %12.6f\n", r.t, r.x[idx::kPz], r.u[0], r.tube.maxCoeff(),
                r.bar.maxCoeff());
  }
  const bench::Metrics m = bench::compute_metrics(log);
  std::printf("position rmse %.5f m, containment %.3f, avg solve %.2f ms\n", m.pos_rmse, m.containment,
              m.avg_solve_ms);
  return 0;
}
