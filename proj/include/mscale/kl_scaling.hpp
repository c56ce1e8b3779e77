#pragma once

// Numerical check that the KL loss of the best linear logit model on a small
// cube of side s decays as s^4 for smooth target logits: the KL divergence
// is quadratic in the logit error and the linear fit error is quadratic in s.
//
// Target: K smooth logits f_i(x) = b_i + sum_m a_im sin(w_m . x + phi_m).
// Loss: mean over the cube (tensor Gauss-Legendre quadrature) of
// KL(softmax f(x) || softmax c(x)), minimised over affine c by Newton's
// method (the objective is convex in the affine coefficients).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mscale/errors.hpp"
#include "mscale/rng.hpp"
#include "mscale/scaling.hpp"

namespace mscale {

/// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int order) {
  if (order < 1) throw ValidationError("quadrature order must be >= 1");
  std::vector<double> x(static_cast<std::size_t>(order)), w(static_cast<std::size_t>(order));
  for (int i = 0; i < order; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= order; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
      }
      dp = order * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

class SmoothLogits {
 public:
  SmoothLogits(int dim, int classes, int modes, std::uint64_t seed) : dim_(dim), classes_(classes) {
    if (dim < 1 || classes < 2 || modes < 1) throw ValidationError("smooth target needs dim >= 1, classes >= 2");
    Rng rng(seed);
    freq_ = Eigen::MatrixXd(modes, dim);
    phase_ = Eigen::VectorXd(modes);
    amp_ = Eigen::MatrixXd(classes, modes);
    bias_ = Eigen::VectorXd(classes);
    for (int m = 0; m < modes; ++m) {
      for (int j = 0; j < dim; ++j) freq_(m, j) = rng.normal(0.0, 2.0);
      phase_[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    for (int i = 0; i < classes; ++i) {
      bias_[i] = rng.normal(0.0, 0.5);
      for (int m = 0; m < modes; ++m) amp_(i, m) = rng.normal();
    }
  }

  int dim() const noexcept { return dim_; }
  int classes() const noexcept { return classes_; }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd s = ((freq_ * x) + phase_).array().sin().matrix();
    return bias_ + amp_ * s;
  }

 private:
  int dim_, classes_;
  Eigen::MatrixXd freq_;
  Eigen::VectorXd phase_;
  Eigen::MatrixXd amp_;
  Eigen::VectorXd bias_;
};

/// Minimal mean KL over the cube centred at `center` with side `side`.
inline double optimal_linear_kl(const SmoothLogits& f, const Eigen::VectorXd& center, double side,
                                int quad_order = 10) {
  const int d = f.dim(), k = f.classes();
  if (center.size() != d) throw ValidationError("cube centre has the wrong dimension");
  if (!(side > 0.0)) throw ValidationError("cube side must be positive");
  const auto [gx, gw] = gauss_legendre(quad_order);

  // Quadrature points in local scaled coordinates u in [-1, 1]^d.
  std::size_t total = 1;
  for (int j = 0; j < d; ++j) total *= static_cast<std::size_t>(quad_order);
  Eigen::MatrixXd feats(static_cast<Eigen::Index>(total), d + 1);
  Eigen::MatrixXd logp(static_cast<Eigen::Index>(total), k);
  Eigen::VectorXd wts(static_cast<Eigen::Index>(total));
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  for (std::size_t q = 0; q < total; ++q) {
    double w = 1.0;
    Eigen::VectorXd x(d);
    feats(static_cast<Eigen::Index>(q), 0) = 1.0;
    for (int j = 0; j < d; ++j) {
      const double u = gx[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
      w *= gw[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] / 2.0;
      feats(static_cast<Eigen::Index>(q), j + 1) = u;
      x[j] = center[j] + 0.5 * side * u;
    }
    const Eigen::VectorXd z = f(x);
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    logp.row(static_cast<Eigen::Index>(q)) = (z.array() - lse).matrix().transpose();
    wts[static_cast<Eigen::Index>(q)] = w;
    for (int j = 0; j < d; ++j) {
      if (++idx[static_cast<std::size_t>(j)] < quad_order) break;
      idx[static_cast<std::size_t>(j)] = 0;
    }
  }

  // Logit of the last class is pinned to 0 (softmax is shift invariant).
  const int nfeat = d + 1;
  const int npar = (k - 1) * nfeat;
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(k - 1, nfeat);
  {
    // Start from a least-squares fit to the centred log-probabilities.
    Eigen::MatrixXd target(static_cast<Eigen::Index>(total), k - 1);
    for (int i = 0; i < k - 1; ++i) target.col(i) = logp.col(i) - logp.col(k - 1);
    const Eigen::MatrixXd wf = wts.asDiagonal() * feats;
    coef = (feats.transpose() * wf).ldlt().solve(wf.transpose() * target).transpose();
  }

  auto objective = [&](const Eigen::MatrixXd& cf, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    double value = 0.0;
    if (grad) *grad = Eigen::VectorXd::Zero(npar);
    if (hess) *hess = Eigen::MatrixXd::Zero(npar, npar);
    Eigen::VectorXd z(k);
    for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(total); ++q) {
      const Eigen::VectorXd phi = feats.row(q).transpose();
      for (int i = 0; i < k - 1; ++i) z[i] = cf.row(i).dot(phi);
      z[k - 1] = 0.0;
      const double m = z.maxCoeff();
      const double lse = m + std::log((z.array() - m).exp().sum());
      const Eigen::VectorXd lq = (z.array() - lse).matrix();
      const Eigen::VectorXd p = logp.row(q).transpose().array().exp().matrix();
      const Eigen::VectorXd qv = lq.array().exp().matrix();
      value += wts[q] * (p.array() * (logp.row(q).transpose().array() - lq.array())).sum();
      if (grad) {
        for (int i = 0; i < k - 1; ++i) grad->segment(i * nfeat, nfeat) += wts[q] * (qv[i] - p[i]) * phi;
      }
      if (hess) {
        const Eigen::MatrixXd pp = phi * phi.transpose();
        for (int i = 0; i < k - 1; ++i)
          for (int j = 0; j < k - 1; ++j) {
            const double h = (i == j ? qv[i] : 0.0) - qv[i] * qv[j];
            hess->block(i * nfeat, j * nfeat, nfeat, nfeat) += wts[q] * h * pp;
          }
      }
    }
    return value;
  };

  auto flat = [&](const Eigen::MatrixXd& cf) {
    Eigen::VectorXd v(npar);
    for (int i = 0; i < k - 1; ++i) v.segment(i * nfeat, nfeat) = cf.row(i).transpose();
    return v;
  };
  auto unflat = [&](const Eigen::VectorXd& v) {
    Eigen::MatrixXd cf(k - 1, nfeat);
    for (int i = 0; i < k - 1; ++i) cf.row(i) = v.segment(i * nfeat, nfeat).transpose();
    return cf;
  };

  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  double value = objective(coef, &g, &h);
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd step = h.ldlt().solve(-g);
    double t = 1.0;
    Eigen::VectorXd base = flat(coef);
    double next = value;
    Eigen::MatrixXd trial;
    while (t > 1e-8) {
      trial = unflat(base + t * step);
      next = objective(trial, nullptr, nullptr);
      if (next <= value) break;
      t *= 0.5;
    }
    if (!(next <= value)) break;
    const double decrease = value - next;
    coef = trial;
    value = objective(coef, &g, &h);
    if (decrease <= 1e-15 * std::max(value, 1e-300) || g.norm() < 1e-18) break;
  }
  return value;
}

struct KlScalingResult {
  std::vector<double> sides;
  std::vector<double> losses;
  double slope = 0.0;  // d log L / d log s
};

/// Fits log L against log s over the given cube sides.
inline KlScalingResult kl_scaling_slope(const SmoothLogits& f, const Eigen::VectorXd& center,
                                        const std::vector<double>& sides, int quad_order = 10) {
  KlScalingResult r;
  r.sides = sides;
  std::vector<double> lx, ly;
  for (double s : sides) {
    const double l = optimal_linear_kl(f, center, s, quad_order);
    r.losses.push_back(l);
    lx.push_back(std::log(s));
    ly.push_back(std::log(l));
  }
  r.slope = ols(lx, ly).slope;
  return r;
}

}  // namespace mscale
