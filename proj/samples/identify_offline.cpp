// Flies a plant that is heavier and draggier than the nominal model under a
// regulator, fits a sparse residual on top of the rigid-body prior and saves it.
#include <cstdio>
#include <string>

#include "pimltube/bench/config.hpp"
#include "pimltube/bench/offline.hpp"
#include "pimltube/piml/learned_model.hpp"
#include "pimltube/piml/model_io.hpp"

using namespace pimltube;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "residual_model.txt";
  const bench::ExperimentConfig cfg;

  bench::OfflineOptions o;
  o.samples = 6000;
  o.dt = cfg.dt;
  o.plant = cfg.plant();
  o.plant.body.mass = 0.031;
  o.plant.linear_drag = 0.015;
  o.wind = cfg.wind(7);
  o.x_box = bench::default_state_box();
  o.u_box = bench::default_input_box();
  const bench::Transitions all = bench::generate_transitions(o);
  const bench::Transitions train = all.slice(0, 5000), test = all.slice(5000, 1000);

  const quadsim::QuadParams prior;
  const piml::PreprocessResult pre = piml::preprocess(bench::residual_dataset(train, prior, cfg.dt));
  const piml::LibrarySpec spec = piml::maybe_expand(piml::base_library(), pre.data);
  const piml::FitResult fr = piml::fit(pre.data, spec, cfg.lasso_h);
  std::printf("kept %lld of %lld rows, %zu active terms\n", static_cast<long long>(pre.data.rows()),
              static_cast<long long>(train.rows()), fr.model.size());

  // Holdout residual with and without the learned correction.
  const piml::Dataset hold = bench::residual_dataset(test, prior, cfg.dt);
  double base = 0.0, learned = 0.0;
  for (Eigen::Index i = 0; i < hold.rows(); ++i) {
    const Vec12 y = hold.derivatives.row(i).transpose();
    base += y.squaredNorm();
    learned += (y - fr.model.evaluate(hold.states.row(i).transpose(), hold.inputs.row(i).transpose())).squaredNorm();
  }
  std::printf("holdout residual rms: prior only %.5f, with model %.5f\n", std::sqrt(base / hold.rows()),
              std::sqrt(learned / hold.rows()));

  piml::save_model(out, fr.model, &prior);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}
