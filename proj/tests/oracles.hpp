#pragma once

// Independent reference implementations used by the tests. They avoid the
// library's code paths on purpose: plain loops, no Eigen expressions where
// the library uses them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "mscale/loss.hpp"
#include "mscale/mlp.hpp"

namespace oracle {

using Points = std::vector<std::vector<double>>;

/// All-pairs distances, sorted per point; returns mu_j = r_j / r_1 for
/// j = 2..k of every point with r_1 > 0.
inline std::vector<std::vector<double>> knn_ratios(const Points& pts, int k) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < pts[i].size(); ++c) s += (pts[i][c] - pts[j][c]) * (pts[i][c] - pts[j][c]);
      d.emplace_back(std::sqrt(s), j);
    }
    std::sort(d.begin(), d.end());
    if (d[0].first == 0.0) continue;
    std::vector<double> mu;
    for (int j = 1; j < k; ++j) mu.push_back(d[static_cast<std::size_t>(j)].first / d[0].first);
    out.push_back(mu);
  }
  return out;
}

/// TwoNN written directly from the cumulative law: regress
/// log(1 - C) = -d log mu through the origin.
inline double twonn(std::vector<double> mu) {
  std::sort(mu.begin(), mu.end());
  const double n = static_cast<double>(mu.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double c = (static_cast<double>(i) + 1.0) / (n + 1.0);
    const double x = std::log(mu[i]);
    const double y = std::log(1.0 - c);
    num += x * y;
    den += x * x;
  }
  return -num / den;
}

/// mu_2 stream drawn by inverting C(mu) = 1 - mu^-d.
inline std::vector<double> mu2_stream(double d, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& m : out) m = std::pow(1.0 - u(eng), -1.0 / d);
  return out;
}

/// Neighbour distances of a homogeneous Poisson process in d dimensions:
/// the volumes r_j^d are cumulative sums of unit exponentials. Returns rows
/// of mu_j = r_j / r_1 for j = 2..k.
inline std::vector<std::vector<double>> poisson_ratios(double d, int k, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::exponential_distribution<double> e(1.0);
  std::vector<std::vector<double>> out(n);
  for (auto& row : out) {
    double g = e(eng);
    const double r1 = std::pow(g, 1.0 / d);
    for (int j = 2; j <= k; ++j) {
      g += e(eng);
      row.push_back(std::pow(g, 1.0 / d) / r1);
    }
  }
  return out;
}

/// mu_3 stream with density 2d (mu^d - 1) / mu^(2d+1) by rejection from the
/// mu_2 law.
inline std::vector<double> mu3_stream(double d, std::size_t n, std::uint64_t seed) {
  // With t = mu^-d uniform on (0,1], the density of t is 2(1 - t), so
  // t = 1 - sqrt(u) for u uniform.
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& m : out) {
    double t;
    do {
      t = 1.0 - std::sqrt(u(eng));
    } while (t <= 0.0);
    m = std::pow(t, -1.0 / d);
  }
  return out;
}

/// Forward pass with explicit loops over the flat parameter layout
/// (per layer: column-major W[out x in], then b).
inline std::vector<double> forward(const std::vector<int>& sizes, const std::vector<double>& params,
                                   std::vector<double> x, std::vector<double>* prefinal = nullptr) {
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l], out = sizes[l + 1];
    std::vector<double> y(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      double s = params[off + static_cast<std::size_t>(in) * static_cast<std::size_t>(out) + static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i)
        s += params[off + static_cast<std::size_t>(i) * static_cast<std::size_t>(out) + static_cast<std::size_t>(o)] *
             x[static_cast<std::size_t>(i)];
      y[static_cast<std::size_t>(o)] = s;
    }
    off += static_cast<std::size_t>(in) * static_cast<std::size_t>(out) + static_cast<std::size_t>(out);
    if (l + 2 < sizes.size())
      for (auto& v : y) v = v > 0.0 ? v : 0.0;
    if (prefinal && l + 3 == sizes.size()) *prefinal = y;
    x = std::move(y);
  }
  return x;
}

/// Mean batch loss computed from the loop forward pass.
inline double batch_loss(const std::vector<int>& sizes, const std::vector<double>& params, const mscale::Matrix& x,
                         const mscale::Loss& loss, const mscale::Matrix& target) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> xi(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) xi[static_cast<std::size_t>(c)] = x(r, c);
    const auto y = forward(sizes, params, xi);
    double s = 0.0;
    switch (loss.kind) {
      case mscale::LossKind::mse:
        for (std::size_t j = 0; j < y.size(); ++j) s += (y[j] - target(r, static_cast<Eigen::Index>(j))) * (y[j] - target(r, static_cast<Eigen::Index>(j)));
        break;
      case mscale::LossKind::pnorm:
        for (std::size_t j = 0; j < y.size(); ++j) s += std::pow(std::abs(y[j] - target(r, static_cast<Eigen::Index>(j))), loss.p);
        break;
      case mscale::LossKind::cross_entropy_logits: {
        double zs = 0.0, ts = 0.0;
        for (std::size_t j = 0; j < y.size(); ++j) {
          zs += std::exp(y[j]);
          ts += std::exp(target(r, static_cast<Eigen::Index>(j)));
        }
        for (std::size_t j = 0; j < y.size(); ++j)
          s -= std::exp(target(r, static_cast<Eigen::Index>(j))) / ts * std::log(std::exp(y[j]) / zs);
        break;
      }
    }
    total += s;
  }
  return total / static_cast<double>(x.rows());
}

/// Ordinary least squares slope and intercept.
inline std::pair<double, double> line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return {sxy / sxx, my - sxy / sxx * mx};
}

}  // namespace oracle
