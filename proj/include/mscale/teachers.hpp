#pragma once

// Teacher networks: random ReLU nets whose inputs beyond the first k
// features are zeroed, products of such teachers on disjoint input slices
// (logits add), and vetting by axis-slice linearity.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscale/errors.hpp"
#include "mscale/mlp.hpp"
#include "mscale/parallel.hpp"
#include "mscale/rng.hpp"

namespace mscale {

/// A single random teacher with k active features.
class MaskedTeacher {
 public:
  MaskedTeacher() = default;
  MaskedTeacher(Mlp net, int features, std::uint64_t seed) : net_(std::move(net)), features_(features), seed_(seed) {
    if (features < 1 || features > net_.input_dim())
      throw ValidationError("feature count " + std::to_string(features) + " must be in [1, " +
                            std::to_string(net_.input_dim()) + "]");
  }

  const Mlp& net() const noexcept { return net_; }
  int features() const noexcept { return features_; }
  std::uint64_t seed() const noexcept { return seed_; }
  int input_dim() const { return net_.input_dim(); }
  int output_dim() const { return net_.output_dim(); }

  std::optional<double> vetting_score;

  Matrix evaluate(const Matrix& x) const {
    check_batch(net_, x);
    if (features_ == net_.input_dim()) return forward(net_, x);
    Matrix masked = x;
    masked.rightCols(net_.input_dim() - features_).setZero();
    return forward(net_, masked);
  }

  /// Active features uniform on [-1/2, 1/2), masked ones zero.
  Matrix sample_inputs(Rng& rng, std::size_t n) const {
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), input_dim());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (int j = 0; j < features_; ++j) x(i, j) = rng.uniform01() - 0.5;
    return x;
  }

 private:
  Mlp net_;
  int features_ = 0;
  std::uint64_t seed_ = 0;
};

inline MaskedTeacher make_teacher(const std::vector<int>& shape, int features, std::uint64_t seed) {
  validate_layer_sizes(shape);
  if (features < 1 || features > shape.front())
    throw ValidationError("feature count " + std::to_string(features) + " exceeds input dimension " +
                          std::to_string(shape.front()));
  return MaskedTeacher(init_mlp(shape, seed), features, seed);
}

/// One factor of a product teacher: product inputs [offset, offset + k) feed
/// the part's first k inputs.
struct ProductPart {
  MaskedTeacher teacher;
  int offset = 0;
  int width() const { return teacher.features(); }
};

/// Either a single masked teacher or a sum of masked teachers on disjoint
/// input slices.
class Teacher {
 public:
  Teacher() = default;
  Teacher(MaskedTeacher single) : single_(std::move(single)) {}  // NOLINT(google-explicit-constructor)

  static Teacher product(std::vector<ProductPart> parts) {
    if (parts.empty()) throw ValidationError("product teacher needs at least one part");
    std::vector<std::pair<int, int>> spans;
    for (const auto& p : parts) {
      if (p.offset < 0) throw ValidationError("negative product slice offset");
      if (p.teacher.output_dim() != parts.front().teacher.output_dim())
        throw ValidationError("product parts have mismatched output dimensions");
      spans.emplace_back(p.offset, p.offset + p.width());
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
      if (spans[i].first < spans[i - 1].second) throw ValidationError("product slices overlap");
    for (std::size_t i = 0; i < parts.size(); ++i)
      for (std::size_t j = i + 1; j < parts.size(); ++j)
        if (parts[i].teacher.net().layer_sizes() == parts[j].teacher.net().layer_sizes() &&
            parts[i].teacher.seed() == parts[j].teacher.seed())
          throw ValidationError("product parts with the same architecture must use distinct seeds");
    Teacher t;
    t.parts_ = std::move(parts);
    return t;
  }

  bool is_product() const noexcept { return !parts_.empty(); }
  const MaskedTeacher& single() const {
    if (is_product()) throw ValidationError("product teacher has no single network");
    return single_;
  }
  MaskedTeacher& single() {
    if (is_product()) throw ValidationError("product teacher has no single network");
    return single_;
  }
  const std::vector<ProductPart>& parts() const noexcept { return parts_; }

  int input_dim() const {
    if (!is_product()) return single_.input_dim();
    int d = 0;
    for (const auto& p : parts_) d = std::max(d, p.offset + p.width());
    return d;
  }
  int output_dim() const { return is_product() ? parts_.front().teacher.output_dim() : single_.output_dim(); }

  /// Indices of the input coordinates the teacher depends on, ascending.
  std::vector<int> active_features() const {
    std::vector<int> f;
    if (!is_product()) {
      for (int j = 0; j < single_.features(); ++j) f.push_back(j);
    } else {
      for (const auto& p : parts_)
        for (int j = 0; j < p.width(); ++j) f.push_back(p.offset + j);
      std::sort(f.begin(), f.end());
    }
    return f;
  }

  int feature_count() const { return static_cast<int>(active_features().size()); }

  Matrix evaluate(const Matrix& x) const {
    if (!is_product()) return single_.evaluate(x);
    if (x.cols() != input_dim()) throw ValidationError("batch width does not match product teacher input");
    Matrix out = Matrix::Zero(x.rows(), output_dim());
    for (const auto& p : parts_) {
      Matrix sub = Matrix::Zero(x.rows(), p.teacher.input_dim());
      sub.leftCols(p.width()) = x.middleCols(p.offset, p.width());
      out += p.teacher.evaluate(sub);
    }
    return out;
  }

  Matrix sample_inputs(Rng& rng, std::size_t n) const {
    if (!is_product()) return single_.sample_inputs(rng, n);
    const auto active = active_features();
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), input_dim());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (int j : active) x(i, j) = rng.uniform01() - 0.5;
    return x;
  }

 private:
  MaskedTeacher single_;
  std::vector<ProductPart> parts_;
};

/// Scalar that the slice regression looks at.
enum class SliceTarget {
  logit_difference,  // output 0 minus output 1 (single-output nets use output 0)
  first_output,
};

struct VetOptions {
  int trials = 50;
  int grid_points = 64;
  SliceTarget target = SliceTarget::logit_difference;
};

struct VetScore {
  double score = 0.0;             // mean R^2 over axes and trials
  std::size_t constant_slices = 0;  // slices with zero output variance, scored as R^2 = 1
};

/// Axis-slice linearity: for each trial and each active axis, fix the other
/// active coordinates uniformly in [-1/2, 1/2), sweep the axis over an even
/// grid on [-1/2, 1/2], regress the output on the axis and record R^2.
inline VetScore vet_score(const Teacher& teacher, std::uint64_t seed, VetOptions opts = {}) {
  if (opts.trials < 1) throw ValidationError("vetting needs trials >= 1");
  if (opts.grid_points < 3) throw ValidationError("vetting grid needs at least 3 points");
  const auto active = teacher.active_features();
  const int g = opts.grid_points;
  const auto axes = static_cast<int>(active.size());
  Rng rng(seed);

  std::vector<double> grid(static_cast<std::size_t>(g));
  double gmean = 0.0, gss = 0.0;
  for (int i = 0; i < g; ++i) {
    grid[static_cast<std::size_t>(i)] = -0.5 + static_cast<double>(i) / (g - 1);
    gmean += grid[static_cast<std::size_t>(i)];
  }
  gmean /= g;
  for (double v : grid) gss += (v - gmean) * (v - gmean);

  VetScore result;
  double total = 0.0;
  Matrix batch(static_cast<Eigen::Index>(axes) * g, teacher.input_dim());
  for (int t = 0; t < opts.trials; ++t) {
    batch.setZero();
    for (int a = 0; a < axes; ++a) {
      Vector base(teacher.input_dim());
      base.setZero();
      for (int j : active) base[j] = rng.uniform01() - 0.5;
      for (int i = 0; i < g; ++i) {
        auto row = batch.row(static_cast<Eigen::Index>(a) * g + i);
        row = base.transpose();
        row[active[static_cast<std::size_t>(a)]] = grid[static_cast<std::size_t>(i)];
      }
    }
    const Matrix out = teacher.evaluate(batch);
    double trial_sum = 0.0;
    for (int a = 0; a < axes; ++a) {
      std::vector<double> y(static_cast<std::size_t>(g));
      double ymean = 0.0;
      for (int i = 0; i < g; ++i) {
        const Eigen::Index r = static_cast<Eigen::Index>(a) * g + i;
        double v = out(r, 0);
        if (opts.target == SliceTarget::logit_difference && out.cols() >= 2) v -= out(r, 1);
        y[static_cast<std::size_t>(i)] = v;
        ymean += v;
      }
      ymean /= g;
      double sxy = 0.0, syy = 0.0;
      for (int i = 0; i < g; ++i) {
        const double dy = y[static_cast<std::size_t>(i)] - ymean;
        sxy += (grid[static_cast<std::size_t>(i)] - gmean) * dy;
        syy += dy * dy;
      }
      double r2;
      if (syy == 0.0) {
        r2 = 1.0;
        ++result.constant_slices;
      } else {
        r2 = (sxy * sxy) / (gss * syy);
      }
      trial_sum += r2;
    }
    total += trial_sum / axes;
  }
  result.score = total / opts.trials;
  return result;
}

struct VettingResult {
  MaskedTeacher best;
  /// (candidate seed, score) for every candidate, in candidate order.
  std::vector<std::pair<std::uint64_t, double>> scores;
};

/// Scores `candidates` random teachers and keeps the least linear one.
/// Equal scores resolve to the lowest seed.
inline VettingResult vet_teachers(const std::vector<int>& shape, int features, int candidates, std::uint64_t seed,
                                  VetOptions opts = {}, unsigned workers = 1) {
  if (candidates < 1) throw ValidationError("vetting needs candidates >= 1");
  std::vector<std::pair<std::uint64_t, double>> scores(static_cast<std::size_t>(candidates));
  parallel_for(scores.size(), workers, [&](std::size_t c) {
    const std::uint64_t cseed = derive_seed(seed, {0x7465616368ULL, c});
    const Teacher t = make_teacher(shape, features, cseed);
    scores[c] = {cseed, vet_score(t, derive_seed(cseed, {0x76657474ULL}), opts).score};
  });
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores[c].second < scores[best].second ||
        (scores[c].second == scores[best].second && scores[c].first < scores[best].first))
      best = c;
  }
  VettingResult r;
  r.best = make_teacher(shape, features, scores[best].first);
  r.best.vetting_score = scores[best].second;
  r.scores = std::move(scores);
  return r;
}

inline nlohmann::ordered_json to_json(const MaskedTeacher& t) {
  nlohmann::ordered_json j;
  j["kind"] = "single";
  j["features"] = t.features();
  j["seed"] = t.seed();
  j["vetting_score"] = t.vetting_score ? nlohmann::ordered_json(*t.vetting_score) : nlohmann::ordered_json(nullptr);
  j["network"] = to_json(t.net());
  return j;
}

inline nlohmann::ordered_json to_json(const Teacher& t) {
  if (!t.is_product()) return to_json(t.single());
  nlohmann::ordered_json j;
  j["kind"] = "product";
  auto parts = nlohmann::ordered_json::array();
  for (const auto& p : t.parts()) {
    nlohmann::ordered_json pj;
    pj["offset"] = p.offset;
    pj["width"] = p.width();
    pj["teacher"] = to_json(p.teacher);
    parts.push_back(std::move(pj));
  }
  j["parts"] = std::move(parts);
  return j;
}

inline MaskedTeacher masked_teacher_from_json(const nlohmann::ordered_json& j) {
  try {
    MaskedTeacher t(mlp_from_json(j.at("network")), j.at("features").get<int>(), j.at("seed").get<std::uint64_t>());
    if (j.contains("vetting_score") && !j["vetting_score"].is_null()) t.vetting_score = j["vetting_score"].get<double>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed teacher record: ") + e.what());
  }
}

inline Teacher teacher_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("kind").get<std::string>() == "single") return masked_teacher_from_json(j);
    std::vector<ProductPart> parts;
    for (const auto& pj : j.at("parts")) parts.push_back({masked_teacher_from_json(pj.at("teacher")), pj.at("offset").get<int>()});
    return Teacher::product(std::move(parts));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed teacher record: ") + e.what());
  }
}

}  // namespace mscale
