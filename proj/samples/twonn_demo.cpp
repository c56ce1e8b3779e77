// Samples a hypercube and a torus and prints the TwoNN and MLE estimates.

#include <cstdio>

#include "mscale/id_estimation.hpp"
#include "mscale/parallel.hpp"
#include "mscale/point_cloud.hpp"

int main() {
  using namespace mscale;
  const NeighborOptions nopts{default_workers()};
  for (int d : {2, 4, 8}) {
    const PointCloud cube = sample_hypercube(d, 4000, 11);
    const PointCloud torus = sample_torus(d, 4000, 11);
    const double cube_twonn = estimate_id_knn(cube, 2, {}, nopts).d_hat;
    const double torus_twonn = estimate_id_knn(torus, 2, {}, nopts).d_hat;
    const double cube_mle = estimate_id_mle(cube, 20, true, nopts).d_hat;
    std::printf("d=%d  hypercube TwoNN %.3f  MLE(k=20) %.3f   torus TwoNN %.3f\n", d, cube_twonn, cube_mle,
                torus_twonn);
  }
}
