#pragma once

// Algebraic (Kasa) least-squares circle fit: minimise
//   sum_i (x_i^2 + y_i^2 + D x_i + E y_i + F)^2
// over (D, E, F); centre (-D/2, -E/2), radius^2 = (D^2 + E^2)/4 - F.
// Points are centred and scaled before solving. A rank-deficient design
// matrix [x y 1] (collinear points) yields the capped radius.

#include <algorithm>
#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "mscale/errors.hpp"

namespace mscale {

inline constexpr double kCollinearRadius = 1e12;

struct Circle {
  double cx = 0.0;
  double cy = 0.0;
  double radius = kCollinearRadius;
  bool collinear = false;
};

inline Circle fit_circle(std::span<const double> xs, std::span<const double> ys, double rank_tol = 1e-10) {
  if (xs.size() != ys.size()) throw ValidationError("circle fit: coordinate lists differ in length");
  if (xs.size() < 3) throw ValidationError("circle fit needs at least 3 points");
  const auto n = static_cast<Eigen::Index>(xs.size());

  double mx = 0.0, my = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    mx += xs[static_cast<std::size_t>(i)];
    my += ys[static_cast<std::size_t>(i)];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    scale = std::max({scale, std::abs(xs[static_cast<std::size_t>(i)] - mx), std::abs(ys[static_cast<std::size_t>(i)] - my)});

  Circle c;
  if (scale == 0.0) {
    c.collinear = true;
    return c;
  }

  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = (xs[static_cast<std::size_t>(i)] - mx) / scale;
    const double y = (ys[static_cast<std::size_t>(i)] - my) / scale;
    a(i, 0) = x;
    a(i, 1) = y;
    a(i, 2) = 1.0;
    b[i] = -(x * x + y * y);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv[2] <= rank_tol * sv[0]) {
    c.collinear = true;
    return c;
  }
  const Eigen::Vector3d sol = svd.solve(b);
  const double ux = -sol[0] / 2.0, uy = -sol[1] / 2.0;
  const double r2 = ux * ux + uy * uy - sol[2];
  const double r = std::sqrt(std::max(r2, 0.0)) * scale;
  c.cx = mx + ux * scale;
  c.cy = my + uy * scale;
  c.radius = std::isfinite(r) && r2 > 0.0 ? std::min(r, kCollinearRadius) : kCollinearRadius;
  return c;
}

}  // namespace mscale
