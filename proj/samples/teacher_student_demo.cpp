// Trains students of a few widths against a 3-feature random teacher, then
// fits L(N) and measures the ID of the largest student's prefinal layer.

#include <cstdio>
#include <vector>

#include "mscale/id_estimation.hpp"
#include "mscale/parallel.hpp"
#include "mscale/scaling.hpp"
#include "mscale/teachers.hpp"
#include "mscale/train.hpp"

int main() {
  using namespace mscale;
  const MaskedTeacher teacher = make_teacher({20, 48, 48, 2}, 3, 2024);

  TrainConfig tc;
  tc.segments = {{4000, 200, 0.01}, {1000, 200, 0.001}};
  tc.loss = Loss::cross_entropy();
  tc.eval_samples = 20000;
  tc.eval_seed = 7;

  LossCurve curve;
  curve.loss_kind = "kl";
  Mlp largest;
  for (int w : {4, 8, 16, 32}) {
    tc.seed = static_cast<std::uint64_t>(100 + w);
    const TrainResult r = train(init_mlp({20, w, w, 2}, tc.seed), teacher, tc);
    std::printf("width %2d  N=%5zu  KL=%.3e\n", w, r.net.param_count(), r.fit_loss());
    curve.points.push_back({static_cast<double>(r.net.param_count()), r.fit_loss(), w, 2, tc.seed});
    largest = r.net;
  }
  const PowerLawFit fit = fit_power_law(curve);
  Rng rng(99);
  const PointCloud acts(prefinal_activations(largest, teacher.sample_inputs(rng, 4000)));
  const double d = estimate_id_knn(acts, 2, {}, {default_workers()}).d_hat;
  std::printf("alpha=%.3f  4/alpha=%.3f  student ID=%.3f\n", fit.alpha, 4.0 / fit.alpha, d);
}
