#pragma once

// Experiment configuration: a JSON document with a `schema_version` field.
// Parsing fills defaults and rejects unknown keys, so the canonical dump of
// a parsed config is a complete description of the run; its hash (with the
// output directory removed) identifies a run directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscale/errors.hpp"
#include "mscale/id_estimation.hpp"
#include "mscale/loss.hpp"
#include "mscale/mlp.hpp"
#include "mscale/teachers.hpp"
#include "mscale/text_io.hpp"
#include "mscale/train.hpp"

namespace mscale {

using ojson = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

enum class ExperimentKind { synthetic_id, ts_sweep, product_manifold, pnorm_sweep, vetting };
enum class Aggregation { hull_of_kept, mean_of_kept };
enum class IdSource { largest, mean };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::synthetic_id: return "synthetic_id";
    case ExperimentKind::ts_sweep: return "ts_sweep";
    case ExperimentKind::product_manifold: return "product_manifold";
    case ExperimentKind::pnorm_sweep: return "pnorm_sweep";
    case ExperimentKind::vetting: return "vetting";
  }
  return "?";
}

inline const char* to_string(Aggregation a) { return a == Aggregation::hull_of_kept ? "hull_of_kept" : "mean_of_kept"; }
inline const char* to_string(IdSource s) { return s == IdSource::largest ? "largest" : "mean"; }
inline const char* to_string(SliceTarget t) {
  return t == SliceTarget::logit_difference ? "logit_difference" : "first_output";
}

struct VettingConfig {
  int candidates = 1;   // 1 = no vetting
  int trials = 50;
  int grid_points = 64;
  SliceTarget target = SliceTarget::logit_difference;
};

struct TeacherConfig {
  std::vector<int> shape{20, 48, 48, 2};
  std::vector<int> features{2};
  VettingConfig vetting;
  std::optional<std::string> file;  // pre-built teacher JSON, relative to the config
};

struct ProductConfig {
  std::vector<int> parts{2, 2};   // feature count of each factor
  std::vector<int> part_widths;   // student widths trained on each factor alone; default: largest width
};

struct StudentConfig {
  std::vector<int> widths{4, 8, 16};
  std::vector<int> depths{2};
  int trials = 1;
  int keep = 1;
  Aggregation aggregation = Aggregation::hull_of_kept;
};

struct TrainingSection {
  std::string loss = "cross_entropy";
  std::vector<double> p_values{2.0};  // pnorm_sweep only
  std::vector<ScheduleSegment> segments{{1000, 200, 0.01}};
  std::size_t eval_samples = 100000;
  long long trace_every = 100;
};

struct IdConfig {
  IdMethod method = IdMethod::knn_cumulative;
  int k = 2;
  std::size_t vectors = 12000;
  IdSource source = IdSource::largest;
  std::vector<std::size_t> profile_counts;  // ID vs number of vectors (largest student)
  std::vector<int> k_scan;                  // ID vs neighbour count (largest student)
  std::optional<int> mle_k;                 // per-point MLE histogram (largest student)
};

struct AnalysisConfig {
  std::optional<double> loss_threshold;
  bool hull_filter = true;
  std::optional<double> n_min;
};

struct EstimatorSpec {
  IdMethod method = IdMethod::knn_cumulative;
  int k = 2;
};

struct SyntheticConfig {
  std::vector<std::string> manifolds{"hypercube", "torus"};
  std::vector<int> dims{2, 4, 8};
  std::size_t points = 10000;
  std::vector<std::size_t> counts;  // ID vs point count profile
  std::vector<EstimatorSpec> estimators{{IdMethod::knn_cumulative, 2}};
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string name = "experiment";
  ExperimentKind kind = ExperimentKind::ts_sweep;
  std::uint64_t master_seed = 0;
  std::string output_dir;
  TeacherConfig teacher;
  ProductConfig product;
  StudentConfig students;
  TrainingSection training;
  IdConfig id;
  AnalysisConfig analysis;
  SyntheticConfig synthetic;
  std::filesystem::path base_dir;  // directory of the config file; not serialised

  bool trains_students() const {
    return kind == ExperimentKind::ts_sweep || kind == ExperimentKind::product_manifold ||
           kind == ExperimentKind::pnorm_sweep;
  }
};

namespace detail {

inline void check_keys(const ojson& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ValidationError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
T get_or(const ojson& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + "." + key + " has the wrong type");
  }
}

template <typename T>
std::optional<T> get_opt(const ojson& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return get_or<T>(j, key, where, T{});
}

inline ExperimentKind kind_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::synthetic_id, ExperimentKind::ts_sweep, ExperimentKind::product_manifold,
                 ExperimentKind::pnorm_sweep, ExperimentKind::vetting})
    if (s == to_string(k)) return k;
  throw ValidationError("unknown experiment kind '" + s + "'");
}

inline IdMethod method_or_throw(const std::string& s) {
  try {
    return id_method_from_string(s);
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  if (c.schema_version != kSchemaVersion)
    throw ValidationError("unsupported schema_version " + std::to_string(c.schema_version) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
  if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos)
    throw ValidationError("name must be non-empty and contain no path separators");

  auto positive_list = [](const std::vector<int>& v, const char* what) {
    if (v.empty()) throw ValidationError(std::string(what) + " must be nonempty");
    for (int x : v)
      if (x < 1) throw ValidationError(std::string(what) + " entries must be >= 1");
  };

  if (c.kind == ExperimentKind::synthetic_id) {
    const auto& s = c.synthetic;
    if (s.manifolds.empty()) throw ValidationError("synthetic.manifolds must be nonempty");
    for (const auto& m : s.manifolds)
      if (m != "hypercube" && m != "torus") throw ValidationError("unknown manifold '" + m + "'");
    positive_list(s.dims, "synthetic.dims");
    if (s.points < 2) throw ValidationError("synthetic.points must be >= 2");
    if (s.estimators.empty()) throw ValidationError("synthetic.estimators must be nonempty");
    for (const auto& e : s.estimators) {
      if (e.k < 2) throw ValidationError("estimator k must be >= 2");
      if (e.method != IdMethod::knn_cumulative && e.k < 3) throw ValidationError("MLE estimators need k >= 3");
      if (static_cast<std::size_t>(e.k) >= s.points) throw ValidationError("estimator k must be below synthetic.points");
    }
    for (auto n : s.counts)
      if (n > s.points) throw ValidationError("synthetic.counts entries must not exceed synthetic.points");
    return;
  }

  validate_layer_sizes(c.teacher.shape);
  if (c.teacher.shape.size() < 3) throw ValidationError("teacher.shape needs at least one hidden layer");
  const auto& v = c.teacher.vetting;
  if (v.candidates < 1 || v.trials < 1 || v.grid_points < 3)
    throw ValidationError("teacher.vetting needs candidates >= 1, trials >= 1, grid_points >= 3");

  if (c.kind == ExperimentKind::product_manifold) {
    if (c.product.parts.size() < 2) throw ValidationError("product.parts needs at least two factors");
    int total = 0;
    for (int k : c.product.parts) {
      if (k < 1 || k > c.teacher.shape.front()) throw ValidationError("product part feature count out of range");
      total += k;
    }
    (void)total;
    for (int w : c.product.part_widths)
      if (w < 1) throw ValidationError("product.part_widths entries must be >= 1");
  } else {
    positive_list(c.teacher.features, "teacher.features");
    for (int k : c.teacher.features)
      if (k > c.teacher.shape.front())
        throw ValidationError("teacher feature count " + std::to_string(k) + " exceeds input dimension " +
                              std::to_string(c.teacher.shape.front()));
    if (c.kind == ExperimentKind::pnorm_sweep && c.teacher.features.size() != 1)
      throw ValidationError("pnorm_sweep uses exactly one teacher feature count");
  }
  if (c.teacher.file) {
    if (c.kind != ExperimentKind::ts_sweep && c.kind != ExperimentKind::pnorm_sweep)
      throw ValidationError("teacher.file is only supported for ts_sweep and pnorm_sweep");
    if (c.teacher.features.size() != 1) throw ValidationError("teacher.file requires exactly one feature count");
    const auto path = c.base_dir / *c.teacher.file;
    if (!std::filesystem::exists(path)) throw ValidationError("teacher.file not found: " + path.string());
  }
  if (c.kind == ExperimentKind::vetting) return;

  positive_list(c.students.widths, "students.widths");
  positive_list(c.students.depths, "students.depths");
  for (int d : c.students.depths)
    if (d < 1 || d > 8) throw ValidationError("students.depths entries must be in [1, 8]");
  if (c.students.trials < 1) throw ValidationError("students.trials must be >= 1");
  if (c.students.keep < 1 || c.students.keep > c.students.trials)
    throw ValidationError("students.keep must be in [1, trials]");

  TrainConfig probe;
  probe.segments = c.training.segments;
  probe.eval_samples = c.training.eval_samples;
  probe.trace_every = c.training.trace_every;
  if (c.kind == ExperimentKind::pnorm_sweep) {
    if (c.training.p_values.empty()) throw ValidationError("training.p_values must be nonempty");
    for (double p : c.training.p_values)
      if (!(p > 0.0) || !std::isfinite(p)) throw ValidationError("training.p_values entries must be > 0");
  } else {
    try {
      probe.loss = loss_from_string(c.training.loss);
    } catch (const Error& e) {
      throw ValidationError(e.what());
    }
    if (probe.loss.kind == LossKind::cross_entropy_logits && c.teacher.shape.back() < 2)
      throw ValidationError("cross-entropy needs a teacher with at least 2 outputs");
  }
  probe.validate();

  if (c.id.k < 2) throw ValidationError("id.k must be >= 2");
  if (c.id.method != IdMethod::knn_cumulative && c.id.k < 3) throw ValidationError("MLE ID needs id.k >= 3");
  if (c.id.vectors <= static_cast<std::size_t>(c.id.k)) throw ValidationError("id.vectors must exceed id.k");
  for (int k : c.id.k_scan)
    if (k < 2 || static_cast<std::size_t>(k) >= c.id.vectors) throw ValidationError("id.k_scan entries out of range");
  for (auto n : c.id.profile_counts)
    if (n > c.id.vectors) throw ValidationError("id.profile_counts entries must not exceed id.vectors");
  if (c.id.mle_k && (*c.id.mle_k < 3 || static_cast<std::size_t>(*c.id.mle_k) >= c.id.vectors))
    throw ValidationError("id.mle_k out of range");
  if (c.analysis.loss_threshold && !(*c.analysis.loss_threshold > 0.0))
    throw ValidationError("analysis.loss_threshold must be positive");
  if (c.analysis.n_min && !(*c.analysis.n_min > 0.0)) throw ValidationError("analysis.n_min must be positive");
}

inline ExperimentConfig config_from_json(const ojson& j, const std::filesystem::path& base_dir = {}) {
  using detail::get_opt;
  using detail::get_or;
  detail::check_keys(j, "config",
                     {"schema_version", "name", "kind", "master_seed", "output_dir", "teacher", "product", "students",
                      "training", "id", "analysis", "synthetic"});
  ExperimentConfig c;
  c.base_dir = base_dir;
  if (!j.contains("schema_version")) throw ValidationError("config is missing schema_version");
  c.schema_version = get_or<int>(j, "schema_version", "config", 0);
  if (!j.contains("kind")) throw ValidationError("config is missing kind");
  c.kind = detail::kind_from_string(get_or<std::string>(j, "kind", "config", ""));
  c.name = get_or<std::string>(j, "name", "config", c.name);
  c.master_seed = get_or<std::uint64_t>(j, "master_seed", "config", 0);
  c.output_dir = get_or<std::string>(j, "output_dir", "config", "");

  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    detail::check_keys(t, "teacher", {"shape", "features", "vetting", "file"});
    c.teacher.shape = get_or(t, "shape", "teacher", c.teacher.shape);
    if (t.contains("features") && t.at("features").is_number_integer())
      c.teacher.features = {t.at("features").get<int>()};
    else
      c.teacher.features = get_or(t, "features", "teacher", c.teacher.features);
    c.teacher.file = get_opt<std::string>(t, "file", "teacher");
    if (t.contains("vetting")) {
      const auto& v = t.at("vetting");
      detail::check_keys(v, "teacher.vetting", {"candidates", "trials", "grid_points", "target"});
      c.teacher.vetting.candidates = get_or(v, "candidates", "teacher.vetting", c.teacher.vetting.candidates);
      c.teacher.vetting.trials = get_or(v, "trials", "teacher.vetting", c.teacher.vetting.trials);
      c.teacher.vetting.grid_points = get_or(v, "grid_points", "teacher.vetting", c.teacher.vetting.grid_points);
      const auto target = get_or<std::string>(v, "target", "teacher.vetting", "logit_difference");
      if (target == "logit_difference")
        c.teacher.vetting.target = SliceTarget::logit_difference;
      else if (target == "first_output")
        c.teacher.vetting.target = SliceTarget::first_output;
      else
        throw ValidationError("unknown vetting target '" + target + "'");
    }
  }
  if (j.contains("product")) {
    const auto& p = j.at("product");
    detail::check_keys(p, "product", {"parts", "part_widths"});
    c.product.parts = get_or(p, "parts", "product", c.product.parts);
    c.product.part_widths = get_or(p, "part_widths", "product", c.product.part_widths);
  }
  if (j.contains("students")) {
    const auto& s = j.at("students");
    detail::check_keys(s, "students", {"widths", "depths", "trials", "keep", "aggregation"});
    c.students.widths = get_or(s, "widths", "students", c.students.widths);
    c.students.depths = get_or(s, "depths", "students", c.students.depths);
    c.students.trials = get_or(s, "trials", "students", c.students.trials);
    c.students.keep = get_or(s, "keep", "students", c.students.trials);
    const auto agg = get_or<std::string>(s, "aggregation", "students", "hull_of_kept");
    if (agg == "hull_of_kept")
      c.students.aggregation = Aggregation::hull_of_kept;
    else if (agg == "mean_of_kept")
      c.students.aggregation = Aggregation::mean_of_kept;
    else
      throw ValidationError("unknown aggregation '" + agg + "'");
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::check_keys(t, "training", {"loss", "p_values", "segments", "eval_samples", "trace_every"});
    c.training.loss = get_or(t, "loss", "training", c.training.loss);
    c.training.p_values = get_or(t, "p_values", "training", c.training.p_values);
    c.training.eval_samples = get_or(t, "eval_samples", "training", c.training.eval_samples);
    c.training.trace_every = get_or(t, "trace_every", "training", c.training.trace_every);
    if (t.contains("segments")) {
      if (!t.at("segments").is_array()) throw ValidationError("training.segments must be a list");
      c.training.segments.clear();
      for (const auto& s : t.at("segments")) {
        detail::check_keys(s, "training.segments[]", {"steps", "batch_size", "learning_rate"});
        ScheduleSegment seg;
        seg.steps = get_or<long long>(s, "steps", "training.segments[]", 0);
        seg.batch_size = get_or<std::size_t>(s, "batch_size", "training.segments[]", 0);
        seg.learning_rate = get_or<double>(s, "learning_rate", "training.segments[]", 0.0);
        c.training.segments.push_back(seg);
      }
    }
  }
  if (j.contains("id")) {
    const auto& t = j.at("id");
    detail::check_keys(t, "id", {"method", "k", "vectors", "source", "profile_counts", "k_scan", "mle_k"});
    c.id.method = detail::method_or_throw(get_or<std::string>(t, "method", "id", "knn_cumulative"));
    c.id.k = get_or(t, "k", "id", c.id.k);
    c.id.vectors = get_or(t, "vectors", "id", c.id.vectors);
    const auto src = get_or<std::string>(t, "source", "id", "largest");
    if (src == "largest")
      c.id.source = IdSource::largest;
    else if (src == "mean")
      c.id.source = IdSource::mean;
    else
      throw ValidationError("unknown id.source '" + src + "'");
    c.id.profile_counts = get_or(t, "profile_counts", "id", c.id.profile_counts);
    c.id.k_scan = get_or(t, "k_scan", "id", c.id.k_scan);
    c.id.mle_k = get_opt<int>(t, "mle_k", "id");
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    detail::check_keys(a, "analysis", {"loss_threshold", "hull_filter", "n_min"});
    c.analysis.loss_threshold = get_opt<double>(a, "loss_threshold", "analysis");
    c.analysis.hull_filter = get_or(a, "hull_filter", "analysis", true);
    c.analysis.n_min = get_opt<double>(a, "n_min", "analysis");
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    detail::check_keys(s, "synthetic", {"manifolds", "dims", "points", "counts", "estimators"});
    c.synthetic.manifolds = get_or(s, "manifolds", "synthetic", c.synthetic.manifolds);
    c.synthetic.dims = get_or(s, "dims", "synthetic", c.synthetic.dims);
    c.synthetic.points = get_or(s, "points", "synthetic", c.synthetic.points);
    c.synthetic.counts = get_or(s, "counts", "synthetic", c.synthetic.counts);
    if (s.contains("estimators")) {
      c.synthetic.estimators.clear();
      for (const auto& e : s.at("estimators")) {
        detail::check_keys(e, "synthetic.estimators[]", {"method", "k"});
        c.synthetic.estimators.push_back(
            {detail::method_or_throw(get_or<std::string>(e, "method", "synthetic.estimators[]", "knn_cumulative")),
             get_or(e, "k", "synthetic.estimators[]", 2)});
      }
    }
  }
  validate(c);
  return c;
}

/// Canonical form with every default filled in. Only the sections relevant
/// to the experiment kind are emitted.
inline ojson to_json(const ExperimentConfig& c, bool include_output_dir = true) {
  ojson j;
  j["schema_version"] = c.schema_version;
  j["name"] = c.name;
  j["kind"] = to_string(c.kind);
  j["master_seed"] = c.master_seed;
  if (include_output_dir && !c.output_dir.empty()) j["output_dir"] = c.output_dir;
  if (c.kind == ExperimentKind::synthetic_id) {
    ojson est = ojson::array();
    for (const auto& e : c.synthetic.estimators) est.push_back({{"method", to_string(e.method)}, {"k", e.k}});
    j["synthetic"] = {{"manifolds", c.synthetic.manifolds},
                      {"dims", c.synthetic.dims},
                      {"points", c.synthetic.points},
                      {"counts", c.synthetic.counts},
                      {"estimators", est}};
    return j;
  }
  ojson teacher = {{"shape", c.teacher.shape}};
  if (c.kind != ExperimentKind::product_manifold) teacher["features"] = c.teacher.features;
  teacher["vetting"] = {{"candidates", c.teacher.vetting.candidates},
                        {"trials", c.teacher.vetting.trials},
                        {"grid_points", c.teacher.vetting.grid_points},
                        {"target", to_string(c.teacher.vetting.target)}};
  if (c.teacher.file) teacher["file"] = *c.teacher.file;
  j["teacher"] = teacher;
  if (c.kind == ExperimentKind::vetting) return j;
  if (c.kind == ExperimentKind::product_manifold)
    j["product"] = {{"parts", c.product.parts}, {"part_widths", c.product.part_widths}};
  j["students"] = {{"widths", c.students.widths},
                   {"depths", c.students.depths},
                   {"trials", c.students.trials},
                   {"keep", c.students.keep},
                   {"aggregation", to_string(c.students.aggregation)}};
  ojson segs = ojson::array();
  for (const auto& s : c.training.segments)
    segs.push_back({{"steps", s.steps}, {"batch_size", s.batch_size}, {"learning_rate", s.learning_rate}});
  ojson training;
  if (c.kind == ExperimentKind::pnorm_sweep)
    training["p_values"] = c.training.p_values;
  else
    training["loss"] = c.training.loss;
  training["segments"] = segs;
  training["eval_samples"] = c.training.eval_samples;
  training["trace_every"] = c.training.trace_every;
  j["training"] = training;
  ojson id = {{"method", to_string(c.id.method)},
              {"k", c.id.k},
              {"vectors", c.id.vectors},
              {"source", to_string(c.id.source)},
              {"profile_counts", c.id.profile_counts},
              {"k_scan", c.id.k_scan}};
  id["mle_k"] = c.id.mle_k ? ojson(*c.id.mle_k) : ojson(nullptr);
  j["id"] = id;
  ojson analysis;
  analysis["loss_threshold"] = c.analysis.loss_threshold ? ojson(*c.analysis.loss_threshold) : ojson(nullptr);
  analysis["hull_filter"] = c.analysis.hull_filter;
  analysis["n_min"] = c.analysis.n_min ? ojson(*c.analysis.n_min) : ojson(nullptr);
  j["analysis"] = analysis;
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) { return fnv1a_hex(to_json(c, false).dump()); }

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

/// Paths (JSON pointers) at which two canonical configs differ.
inline std::vector<std::string> config_diff(const ojson& a, const ojson& b) {
  std::vector<std::string> out;
  for (const auto& op : ojson::diff(a, b)) out.push_back(op.value("path", std::string("/")));
  return out;
}

}  // namespace mscale
