#pragma once

#include <cmath>

#include "mscale/errors.hpp"
#include "mscale/mlp.hpp"

namespace mscale {

/// ADAM with the usual defaults; only the learning rate varies per step.
struct AdamState {
  Vector m;
  Vector v;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(Eigen::Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

inline void adam_step(AdamState& s, Vector& params, const Vector& grad, double lr) {
  if (grad.size() != params.size() || s.m.size() != params.size())
    throw ValidationError("ADAM state, parameters and gradient differ in length");
  if (!grad.allFinite()) throw TrainingFault("non-finite gradient passed to ADAM");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

}  // namespace mscale
