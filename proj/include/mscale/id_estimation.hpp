#pragma once

// Intrinsic dimension from nearest-neighbour distance ratios.
//
// For every point let r_j be the distance to its j-th nearest neighbour and
// mu_j = r_j / r_1. On a d-dimensional manifold with locally constant density
// the marginal law of mu_k has CDF C(mu) = (1 - mu^-d)^(k-1), so
//   log(1 - C^(1/(k-1))) = -d log mu_k
// and d is the slope of a line through the origin. k = 2 is TwoNN. The joint
// law of (mu_2..mu_k) gives the maximum-likelihood estimator
//   d = m / ((k-1) log mu_k - sum_{j=2}^{k-1} log mu_j),  m = k-1 or k-2,
// averaged over points (m = k-2 is unbiased).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mscale/errors.hpp"
#include "mscale/parallel.hpp"
#include "mscale/point_cloud.hpp"
#include "mscale/rng.hpp"
#include "mscale/text_io.hpp"

namespace mscale {

/// Ratios mu_2..mu_k for every point with a non-zero nearest-neighbour
/// distance. Row i of `mu` belongs to cloud point `point_index[i]`; column
/// j holds mu_{j+2}.
struct NeighborRatios {
  RowMatrix mu;
  std::vector<std::size_t> point_index;
  int k = 2;
  std::size_t excluded_count = 0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(mu.rows()); }
  /// mu_j for row i, j in [2, k].
  double at(std::size_t i, int j) const { return mu(static_cast<Eigen::Index>(i), j - 2); }

  /// Wrap externally generated ratios (each row sorted, all >= 1, finite).
  static NeighborRatios from_matrix(RowMatrix mu) {
    if (mu.cols() < 1) throw ValidationError("ratio matrix needs at least one column");
    for (Eigen::Index i = 0; i < mu.rows(); ++i) {
      double prev = 1.0;
      for (Eigen::Index j = 0; j < mu.cols(); ++j) {
        const double v = mu(i, j);
        if (!std::isfinite(v) || v < prev)
          throw ValidationError("ratio row " + std::to_string(i) + " is not a finite non-decreasing sequence >= 1");
        prev = v;
      }
    }
    NeighborRatios r;
    r.k = static_cast<int>(mu.cols()) + 1;
    r.point_index.resize(static_cast<std::size_t>(mu.rows()));
    std::iota(r.point_index.begin(), r.point_index.end(), std::size_t{0});
    r.mu = std::move(mu);
    return r;
  }
};

enum class IdMethod { knn_cumulative, mle_biased, mle_unbiased };

inline const char* to_string(IdMethod m) {
  switch (m) {
    case IdMethod::knn_cumulative: return "knn_cumulative";
    case IdMethod::mle_biased: return "mle_biased";
    case IdMethod::mle_unbiased: return "mle_unbiased";
  }
  return "?";
}

inline IdMethod id_method_from_string(const std::string& s) {
  if (s == "knn_cumulative" || s == "knn" || s == "twonn") return IdMethod::knn_cumulative;
  if (s == "mle_biased" || s == "mle") return IdMethod::mle_biased;
  if (s == "mle_unbiased") return IdMethod::mle_unbiased;
  throw ValidationError("unknown ID method '" + s + "'");
}

struct IdEstimate {
  double d_hat = 0.0;
  IdMethod method = IdMethod::knn_cumulative;
  int k = 2;
  std::size_t n_used = 0;
  std::size_t excluded = 0;
  std::optional<double> fit_r2;        // knn_cumulative only
  std::optional<double> std_error;     // MLE: standard error of the mean
  std::vector<double> per_point;       // MLE only
};

inline nlohmann::ordered_json to_json(const IdEstimate& e) {
  nlohmann::ordered_json j;
  j["method"] = to_string(e.method);
  j["k"] = e.k;
  j["n_used"] = e.n_used;
  j["excluded"] = e.excluded;
  j["d_hat"] = e.d_hat;
  j["fit_r2"] = e.fit_r2 ? nlohmann::ordered_json(*e.fit_r2) : nlohmann::ordered_json(nullptr);
  if (e.std_error) j["std_error"] = *e.std_error;
  return j;
}

/// Per-point MLE values, one per line, for histogramming.
inline std::string per_point_csv(const IdEstimate& e) {
  std::string out = "point,d_hat\n";
  for (std::size_t i = 0; i < e.per_point.size(); ++i)
    out += std::to_string(i) + "," + format_double(e.per_point[i]) + "\n";
  return out;
}

struct NeighborOptions {
  unsigned workers = 1;
};

/// Exact k nearest neighbours by exhaustive search. Distances are computed
/// from coordinate differences; ties are broken by point index. Points with
/// r_1 = 0 are excluded and counted.
inline NeighborRatios neighbor_ratios(const PointCloud& cloud, int k, NeighborOptions opts = {}) {
  if (k < 2) throw ValidationError("neighbour count k must be >= 2");
  const std::size_t n = cloud.size();
  if (n <= static_cast<std::size_t>(k))
    throw ValidationError("cloud has " + std::to_string(n) + " points, need more than k = " + std::to_string(k));
  const auto& pts = cloud.points();
  const Eigen::Index dim = pts.cols();

  RowMatrix all(static_cast<Eigen::Index>(n), k - 1);
  std::vector<char> usable(n, 0);

  parallel_for(n, opts.workers, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n - 1);
    const double* pi = pts.data() + static_cast<Eigen::Index>(i) * dim;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* pj = pts.data() + static_cast<Eigen::Index>(j) * dim;
      double s = 0.0;
      for (Eigen::Index c = 0; c < dim; ++c) {
        const double t = pi[c] - pj[c];
        s += t * t;
      }
      cand.emplace_back(s, j);
    }
    auto kth = cand.begin() + (k - 1);
    std::nth_element(cand.begin(), kth, cand.end());
    std::sort(cand.begin(), kth + 1);
    const double r1 = std::sqrt(cand[0].first);
    if (r1 == 0.0) return;
    usable[i] = 1;
    for (int j = 1; j < k; ++j) all(static_cast<Eigen::Index>(i), j - 1) = std::sqrt(cand[static_cast<std::size_t>(j)].first) / r1;
  });

  NeighborRatios out;
  out.k = k;
  for (std::size_t i = 0; i < n; ++i) {
    if (usable[i])
      out.point_index.push_back(i);
    else
      ++out.excluded_count;
  }
  if (out.point_index.empty()) throw ValidationError("no usable points: every nearest-neighbour distance is zero");
  out.mu.resize(static_cast<Eigen::Index>(out.point_index.size()), k - 1);
  for (std::size_t r = 0; r < out.point_index.size(); ++r)
    out.mu.row(static_cast<Eigen::Index>(r)) = all.row(static_cast<Eigen::Index>(out.point_index[r]));
  return out;
}

struct KnnOptions {
  /// Fraction of the largest mu_k values left out of the regression. The
  /// empirical CDF is still computed over all points.
  double discard_fraction = 0.0;
};

/// Cumulative-law estimator using mu_k for k = ratios.k (or a smaller k).
inline IdEstimate estimate_id_knn(const NeighborRatios& ratios, int k, KnnOptions opts = {}) {
  if (k < 2 || k > ratios.k) throw ValidationError("k must be in [2, " + std::to_string(ratios.k) + "]");
  if (!(opts.discard_fraction >= 0.0 && opts.discard_fraction < 1.0))
    throw ValidationError("discard fraction must be in [0, 1)");
  const std::size_t n = ratios.size();
  std::vector<double> mu(n);
  for (std::size_t i = 0; i < n; ++i) mu[i] = ratios.at(i, k);
  std::sort(mu.begin(), mu.end());

  const auto dropped = static_cast<std::size_t>(std::floor(opts.discard_fraction * static_cast<double>(n)));
  const std::size_t used = n - dropped;
  if (used < 2) throw ValidationError("fewer than 2 points left for the regression");

  const double inv_km1 = 1.0 / static_cast<double>(k - 1);
  std::vector<double> xs(used), ys(used);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < used; ++i) {
    const double c = static_cast<double>(i + 1) / static_cast<double>(n + 1);
    xs[i] = std::log(mu[i]);
    ys[i] = k == 2 ? std::log1p(-c) : std::log1p(-std::pow(c, inv_km1));
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  if (sxx == 0.0) throw ValidationError("zero-variance neighbour ratios: every mu_k equals 1");

  const double slope = sxy / sxx;
  double ybar = 0.0;
  for (double y : ys) ybar += y;
  ybar /= static_cast<double>(used);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < used; ++i) {
    const double r = ys[i] - slope * xs[i];
    ss_res += r * r;
    ss_tot += (ys[i] - ybar) * (ys[i] - ybar);
  }

  IdEstimate e;
  e.d_hat = -slope;
  e.method = IdMethod::knn_cumulative;
  e.k = k;
  e.n_used = used;
  e.excluded = ratios.excluded_count;
  e.fit_r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  if (!(e.d_hat > 0.0) || !std::isfinite(e.d_hat)) throw ValidationError("regression produced a non-positive dimension");
  return e;
}

/// Levina-Bickel style estimator averaged over points.
inline IdEstimate estimate_id_mle(const NeighborRatios& ratios, int k, bool unbiased) {
  if (k < 3 || k > ratios.k) throw ValidationError("MLE needs k in [3, " + std::to_string(ratios.k) + "]");
  const double numer = unbiased ? k - 2.0 : k - 1.0;
  IdEstimate e;
  e.method = unbiased ? IdMethod::mle_unbiased : IdMethod::mle_biased;
  e.k = k;
  e.excluded = ratios.excluded_count;
  e.per_point.reserve(ratios.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    double s = (k - 1.0) * std::log(ratios.at(i, k));
    for (int j = 2; j < k; ++j) s -= std::log(ratios.at(i, j));
    if (!(s > 0.0) || !std::isfinite(s)) {
      ++e.excluded;
      continue;
    }
    e.per_point.push_back(numer / s);
  }
  if (e.per_point.empty()) throw ValidationError("no usable points for the MLE estimate");
  e.n_used = e.per_point.size();
  double sum = 0.0;
  for (double v : e.per_point) sum += v;
  e.d_hat = sum / static_cast<double>(e.n_used);
  if (e.n_used > 1) {
    double ss = 0.0;
    for (double v : e.per_point) ss += (v - e.d_hat) * (v - e.d_hat);
    e.std_error = std::sqrt(ss / static_cast<double>(e.n_used - 1) / static_cast<double>(e.n_used));
  }
  return e;
}

inline IdEstimate estimate_id_knn(const PointCloud& cloud, int k, KnnOptions opts = {}, NeighborOptions nopts = {}) {
  return estimate_id_knn(neighbor_ratios(cloud, k, nopts), k, opts);
}

inline IdEstimate estimate_id_mle(const PointCloud& cloud, int k, bool unbiased, NeighborOptions nopts = {}) {
  return estimate_id_mle(neighbor_ratios(cloud, k, nopts), k, unbiased);
}

inline IdEstimate estimate_id(const NeighborRatios& ratios, IdMethod method, int k, KnnOptions opts = {}) {
  switch (method) {
    case IdMethod::knn_cumulative: return estimate_id_knn(ratios, k, opts);
    case IdMethod::mle_biased: return estimate_id_mle(ratios, k, false);
    case IdMethod::mle_unbiased: return estimate_id_mle(ratios, k, true);
  }
  throw ValidationError("unknown ID method");
}

inline IdEstimate estimate_id(const PointCloud& cloud, IdMethod method, int k, KnnOptions opts = {},
                              NeighborOptions nopts = {}) {
  return estimate_id(neighbor_ratios(cloud, k, nopts), method, k, opts);
}

struct IdProfileEntry {
  std::size_t n = 0;
  IdEstimate estimate;
};

struct IdProfile {
  std::vector<IdProfileEntry> entries;   // ascending n
  std::vector<std::string> warnings;     // skipped counts
};

/// ID as a function of the number of points: each count is a seeded
/// subsample without replacement (the full cloud when count == size).
inline IdProfile id_vs_pointcount(const PointCloud& cloud, IdMethod method, int k, std::vector<std::size_t> counts,
                                  std::uint64_t seed, NeighborOptions nopts = {}) {
  std::sort(counts.begin(), counts.end());
  IdProfile profile;
  for (std::size_t count : counts) {
    if (count > cloud.size())
      throw ValidationError("count " + std::to_string(count) + " exceeds cloud size " + std::to_string(cloud.size()));
    if (count < static_cast<std::size_t>(k) + 1) {
      profile.warnings.push_back("skipped n=" + std::to_string(count) + ": fewer than k+1 points");
      continue;
    }
    IdProfileEntry entry;
    entry.n = count;
    if (count == cloud.size()) {
      entry.estimate = estimate_id(cloud, method, k, {}, nopts);
    } else {
      Rng rng(derive_seed(seed, {count}));
      std::vector<std::size_t> idx(cloud.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(count);
      entry.estimate = estimate_id(cloud.subset(idx), method, k, {}, nopts);
    }
    profile.entries.push_back(std::move(entry));
  }
  return profile;
}

}  // namespace mscale
