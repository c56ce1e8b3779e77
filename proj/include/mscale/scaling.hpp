#pragma once

// Power-law fits L(N) = c * N^-alpha on log-log loss curves.
//
// Pipeline: keep the best loss per model size and the lower convex hull in
// (log N, log L); choose the most linear prefix by fitting a circle to the
// first n >= 3 points and taking the n with the largest radius (ties go to
// the larger n); ordinary least squares of log L on log N over that prefix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscale/circle_fit.hpp"
#include "mscale/errors.hpp"
#include "mscale/text_io.hpp"

namespace mscale {

struct LossPoint {
  double n = 0.0;  // parameter count
  double loss = 0.0;
  int width = 0;
  int depth = 0;
  std::uint64_t seed = 0;
};

struct LossCurve {
  std::vector<LossPoint> points;
  std::string loss_kind;

  void validate() const {
    for (const auto& p : points) {
      if (!(p.n > 0.0) || !std::isfinite(p.n)) throw ValidationError("loss curve: N must be positive and finite");
      if (!(p.loss > 0.0) || !std::isfinite(p.loss)) throw ValidationError("loss curve: L must be positive and finite");
    }
  }

  void sort_by_n() {
    std::stable_sort(points.begin(), points.end(), [](const LossPoint& a, const LossPoint& b) { return a.n < b.n; });
  }
};

inline std::string loss_curve_csv(const LossCurve& c) {
  std::string out = "N,L,width,depth,seed,loss_kind\n";
  for (const auto& p : c.points)
    out += format_double(p.n) + "," + format_double(p.loss) + "," + std::to_string(p.width) + "," +
           std::to_string(p.depth) + "," + std::to_string(p.seed) + "," + c.loss_kind + "\n";
  return out;
}

/// Parses the loss-curve CSV (header required; width/depth/seed/loss_kind
/// columns optional).
inline LossCurve parse_loss_curve(std::string_view text) {
  LossCurve curve;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields.emplace_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (header.empty()) {
      header = fields;
      if (header.size() < 2 || header[0] != "N" || header[1] != "L")
        throw ParseError("loss curve: header must start with N,L");
      continue;
    }
    if (fields.size() != header.size())
      throw ParseError("loss curve row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields");
    LossPoint p;
    if (!parse_double(fields[0], p.n) || !parse_double(fields[1], p.loss))
      throw ParseError("loss curve row " + std::to_string(line_no) + ": malformed N or L");
    for (std::size_t i = 2; i < header.size(); ++i) {
      double v = 0.0;
      if (header[i] == "loss_kind") {
        curve.loss_kind = fields[i];
        continue;
      }
      if (!parse_double(fields[i], v)) throw ParseError("loss curve row " + std::to_string(line_no) + ": malformed " + header[i]);
      if (header[i] == "width") p.width = static_cast<int>(v);
      if (header[i] == "depth") p.depth = static_cast<int>(v);
      if (header[i] == "seed") p.seed = static_cast<std::uint64_t>(v);
    }
    curve.points.push_back(p);
  }
  try {
    curve.validate();
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
  return curve;
}

/// Lowest loss at each N, sorted by N.
inline LossCurve best_per_n(const LossCurve& curve) {
  std::map<double, LossPoint> best;
  for (const auto& p : curve.points) {
    auto it = best.find(p.n);
    if (it == best.end() || p.loss < it->second.loss) best[p.n] = p;
  }
  LossCurve out;
  out.loss_kind = curve.loss_kind;
  for (const auto& [n, p] : best) out.points.push_back(p);
  return out;
}

/// Best loss per N, then the lower convex hull in (log N, log L). Points
/// lying on a hull edge (within rounding) are kept.
inline LossCurve convex_hull_filter(const LossCurve& curve) {
  if (curve.points.empty()) throw ValidationError("loss curve is empty");
  curve.validate();
  const LossCurve best = best_per_n(curve);
  std::vector<LossPoint> hull;
  auto lx = [](const LossPoint& p) { return std::log(p.n); };
  auto ly = [](const LossPoint& p) { return std::log(p.loss); };
  for (const auto& p : best.points) {
    while (hull.size() >= 2) {
      const auto& o = hull[hull.size() - 2];
      const auto& a = hull.back();
      const double ax = lx(a) - lx(o), ay = ly(a) - ly(o);
      const double bx = lx(p) - lx(o), by = ly(p) - ly(o);
      const double cross = ax * by - ay * bx;
      const double tol = 1e-12 * std::hypot(ax, ay) * std::hypot(bx, by);
      if (cross < -tol)
        hull.pop_back();  // a lies above the chord o -> p
      else
        break;
    }
    hull.push_back(p);
  }
  LossCurve out;
  out.loss_kind = curve.loss_kind;
  out.points = std::move(hull);
  return out;
}

struct PrefixSelection {
  std::size_t n_points = 0;
  double max_radius = 0.0;
  std::vector<double> radii;  // radii[i] belongs to prefix length i + 3
};

/// Most linear prefix of an N-sorted curve by maximal circle radius.
inline PrefixSelection select_linear_prefix(const LossCurve& curve) {
  if (curve.points.size() < 3) throw ValidationError("prefix selection needs at least 3 points");
  std::vector<double> xs, ys;
  for (const auto& p : curve.points) {
    xs.push_back(std::log(p.n));
    ys.push_back(std::log(p.loss));
  }
  PrefixSelection sel;
  for (std::size_t n = 3; n <= xs.size(); ++n) {
    const double r = fit_circle(std::span(xs.data(), n), std::span(ys.data(), n)).radius;
    sel.radii.push_back(r);
    if (r >= sel.max_radius) {
      sel.max_radius = r;
      sel.n_points = n;
    }
  }
  return sel;
}

struct PowerLawFit {
  double alpha = 0.0;
  double c = 0.0;
  double intercept = 0.0;  // log c
  double alpha_se = 0.0;
  std::size_t n_points_used = 0;
  double max_radius = 0.0;
  double n_min = 0.0;
  double n_fit_max = 0.0;
  std::vector<double> radii;
  std::vector<double> residuals;  // log L - fitted log L over the prefix
  LossCurve curve;                // hull-filtered curve the fit was chosen from

  double predict(double n) const { return c * std::pow(n, -alpha); }
};

struct FitOptions {
  bool hull_filter = true;
  /// Smallest N admitted to the fit; the default starts at the smallest N tested.
  std::optional<double> n_min;
};

/// Slope and intercept of y on x with the slope's standard error.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
  double r2 = 0.0;
};

inline LineFit ols(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("line fit needs at least 2 paired values");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ValidationError("line fit: zero variance in the regressor");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    ss_res += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  if (x.size() > 2) {
    const double s2 = ss_res / (n - 2.0);
    f.slope_se = std::sqrt(s2 / sxx);
    f.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return f;
}

inline PowerLawFit fit_power_law(const LossCurve& input, FitOptions opts = {}) {
  LossCurve curve = input;
  curve.validate();
  curve.sort_by_n();
  if (opts.n_min) {
    std::erase_if(curve.points, [&](const LossPoint& p) { return p.n < *opts.n_min; });
  }
  if (curve.points.empty()) throw ValidationError("loss curve is empty");
  curve = opts.hull_filter ? convex_hull_filter(curve) : best_per_n(curve);
  if (curve.points.size() < 3) throw ValidationError("power-law fit needs at least 3 points");

  const PrefixSelection sel = select_linear_prefix(curve);
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < sel.n_points; ++i) {
    xs.push_back(std::log(curve.points[i].n));
    ys.push_back(std::log(curve.points[i].loss));
  }
  const LineFit line = ols(xs, ys);

  PowerLawFit fit;
  fit.alpha = -line.slope;
  fit.intercept = line.intercept;
  fit.c = std::exp(line.intercept);
  fit.alpha_se = line.slope_se;
  fit.n_points_used = sel.n_points;
  fit.max_radius = sel.max_radius;
  fit.radii = sel.radii;
  fit.n_min = curve.points.front().n;
  fit.n_fit_max = curve.points[sel.n_points - 1].n;
  for (std::size_t i = 0; i < xs.size(); ++i) fit.residuals.push_back(ys[i] - (line.intercept + line.slope * xs[i]));
  fit.curve = std::move(curve);
  if (!std::isfinite(fit.alpha)) throw ValidationError("power-law fit produced a non-finite exponent");
  return fit;
}

struct NMax {
  double n_max = 0.0;
  bool extrapolated = false;
};

/// Model size at which the fitted law reaches `threshold`.
inline NMax n_max_at_loss_threshold(const PowerLawFit& fit, double threshold) {
  if (!(fit.alpha > 0.0)) throw ValidationError("N_max needs a positive exponent");
  if (!(threshold > 0.0)) throw ValidationError("loss threshold must be positive");
  NMax r;
  r.n_max = std::pow(fit.c / threshold, 1.0 / fit.alpha);
  r.extrapolated = r.n_max > fit.n_fit_max * (1.0 + 1e-9);
  return r;
}

/// Largest N inside the selected power-law prefix.
inline double n_max_empirical(const PowerLawFit& fit) { return fit.n_fit_max; }

inline nlohmann::ordered_json to_json(const PowerLawFit& f, std::optional<NMax> threshold_nmax = std::nullopt) {
  nlohmann::ordered_json j;
  j["alpha"] = f.alpha;
  j["alpha_se"] = f.alpha_se;
  j["c"] = f.c;
  j["n_points_used"] = f.n_points_used;
  j["max_radius"] = f.max_radius;
  j["fit_range"] = {f.n_min, f.n_fit_max};
  j["residuals"] = f.residuals;
  if (threshold_nmax) {
    j["n_max_threshold"] = threshold_nmax->n_max;
    j["extrapolated"] = threshold_nmax->extrapolated;
  } else {
    j["extrapolated"] = false;
  }
  j["n_max_empirical"] = n_max_empirical(f);
  return j;
}

struct AlphaDimensionEntry {
  double features = 0.0;  // k
  double d_hat = 0.0;     // measured ID
  double alpha = 0.0;
};

struct AlphaDimensionReport {
  LineFit four_over_alpha_vs_d;
  LineFit four_over_alpha_vs_k;
  LineFit k_vs_inverse_alpha;
  LineFit d_vs_inverse_alpha;
  std::vector<AlphaDimensionEntry> entries;
};

/// Linear relations between the inverse exponent and the two notions of
/// dimension.
inline AlphaDimensionReport alpha_vs_dimension_report(std::vector<AlphaDimensionEntry> entries) {
  if (entries.size() < 2) throw ValidationError("report needs at least 2 entries");
  std::vector<double> k, d, four, inv;
  for (const auto& e : entries) {
    if (!(e.alpha > 0.0) || !std::isfinite(e.alpha)) throw ValidationError("report: exponents must be positive");
    k.push_back(e.features);
    d.push_back(e.d_hat);
    four.push_back(4.0 / e.alpha);
    inv.push_back(1.0 / e.alpha);
  }
  AlphaDimensionReport r;
  r.four_over_alpha_vs_d = ols(d, four);
  r.four_over_alpha_vs_k = ols(k, four);
  r.k_vs_inverse_alpha = ols(inv, k);
  r.d_vs_inverse_alpha = ols(inv, d);
  r.entries = std::move(entries);
  return r;
}

inline std::string alpha_dimension_csv(const AlphaDimensionReport& r) {
  std::string out = "k,d_hat,alpha,four_over_alpha,fit_vs_d,fit_vs_k\n";
  for (const auto& e : r.entries) {
    const double fd = r.four_over_alpha_vs_d.intercept + r.four_over_alpha_vs_d.slope * e.d_hat;
    const double fk = r.four_over_alpha_vs_k.intercept + r.four_over_alpha_vs_k.slope * e.features;
    out += format_double(e.features) + "," + format_double(e.d_hat) + "," + format_double(e.alpha) + "," +
           format_double(4.0 / e.alpha) + "," + format_double(fd) + "," + format_double(fk) + "\n";
  }
  return out;
}

inline nlohmann::ordered_json to_json(const LineFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"slope_se", f.slope_se},
          {"intercept_se", f.intercept_se}, {"r2", f.r2}};
}

}  // namespace mscale
