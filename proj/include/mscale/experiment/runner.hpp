#pragma once

// Config-driven pipeline: teachers -> student units -> activation dumps and
// ID -> loss curves and power-law fits -> group summaries -> reports.
//
// Every artifact lives at a fixed path under the run directory and is a pure
// function of the config, so an interrupted or damaged run is completed by
// producing whatever is missing. A unit is (group, width, depth, trial); its
// seed depends only on the master seed and those coordinates.
//
// Layout:
//   manifest.json, run_record.json, config.json
//   teachers/<group>.json, vetting/<group>.json
//   units/<unit>/{result.json, checkpoint.json, trace.csv}
//   activations/<size>.csv, id/<size>.json, diagnostics/<group>.json
//   curves/<group>.csv, fits/<group>.json, groups/<group>.json
//   synthetic/<group>.json, reports/<figure>.{csv,svg}

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mscale/errors.hpp"
#include "mscale/experiment/config.hpp"
#include "mscale/experiment/report.hpp"
#include "mscale/id_estimation.hpp"
#include "mscale/mlp.hpp"
#include "mscale/parallel.hpp"
#include "mscale/point_cloud.hpp"
#include "mscale/rng.hpp"
#include "mscale/scaling.hpp"
#include "mscale/teachers.hpp"
#include "mscale/text_io.hpp"
#include "mscale/train.hpp"

namespace mscale {

namespace fs = std::filesystem;

/// Raised when a run stops early; the run directory holds a manifest of the
/// partial state.
class RunFault : public Error {
 public:
  using Error::Error;
};

struct RunOptions {
  unsigned workers = default_workers();
  bool analysis = true;  // false: teachers and student units only
  std::ostream* log = &std::cerr;
};

struct UnitSpec {
  std::string id;
  std::string group;
  int width = 0;
  int depth = 0;
  int trial = 0;
  std::uint64_t seed = 0;
};

struct UnitResult {
  UnitSpec spec;
  std::size_t param_count = 0;
  bool ok = false;
  double loss = 0.0;
  double loss_se = 0.0;
  double fit_loss = 0.0;  // KL for cross-entropy, the loss otherwise
  double fit_loss_se = 0.0;
  std::optional<double> teacher_entropy;
  std::string message;
};

struct RunSummary {
  std::string config_hash;
  std::size_t units_trained = 0;
  std::size_t units_reused = 0;
  std::size_t units_diverged = 0;
  std::vector<ojson> groups;
  std::vector<std::string> warnings;
};

inline std::uint64_t name_tag(std::string_view s) { return fnv1a64(s); }

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes the manifest: config, hash, status and a checksum for every other
/// file in the run directory.
inline void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::string& status,
                           const std::string& message = {}) {
  ojson files = ojson::array();
  std::vector<fs::path> paths;
  if (fs::exists(dir))
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) paths.push_back(fs::relative(e.path(), dir));
  std::sort(paths.begin(), paths.end());
  for (const auto& rel : paths) {
    const std::string name = rel.generic_string();
    if (name == "manifest.json" || rel.extension() == ".tmp") continue;
    const std::string data = read_file(dir / rel);
    files.push_back({{"path", name}, {"bytes", data.size()}, {"fnv1a64", fnv1a_hex(data)}});
  }
  ojson m;
  m["schema_version"] = kSchemaVersion;
  m["config_hash"] = config_hash(cfg);
  m["status"] = status;
  if (!message.empty()) m["message"] = message;
  m["config_dir"] = fs::absolute(cfg.base_dir.empty() ? fs::path(".") : cfg.base_dir).lexically_normal().string();
  m["config"] = to_json(cfg, false);
  m["files"] = files;
  write_file(dir / "manifest.json", json_text(m));
}

/// Loads the config embedded in a run manifest and checks it against the
/// recorded hash.
inline ExperimentConfig config_from_manifest(const fs::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  if (!m) throw ValidationError("no readable manifest.json in " + dir.string());
  if (!m->contains("config") || !m->contains("config_hash")) throw ValidationError("manifest lacks config or hash");
  ExperimentConfig cfg = config_from_json(m->at("config"), m->value("config_dir", std::string(".")));
  const std::string recorded = m->at("config_hash").get<std::string>();
  if (config_hash(cfg) != recorded)
    throw ValidationError("manifest config hash " + recorded + " does not match its embedded config (" +
                          config_hash(cfg) + ")");
  cfg.output_dir = dir.string();
  return cfg;
}

class Runner {
 public:
  Runner(ExperimentConfig cfg, fs::path dir, RunOptions opts = {})
      : cfg_(std::move(cfg)), dir_(std::move(dir)), opts_(opts) {
    validate(cfg_);
    hash_ = config_hash(cfg_);
  }

  const std::string& hash() const noexcept { return hash_; }

  RunSummary run() {
    check_existing();
    fs::create_directories(dir_);
    started_ = utc_timestamp();
    if (auto rec = read_json(dir_ / "run_record.json"); rec && rec->contains("started_at"))
      started_ = rec->at("started_at").get<std::string>();
    write_file(dir_ / "config.json", json_text(to_json(cfg_, false)));
    write_manifest(dir_, cfg_, "running");
    try {
      switch (cfg_.kind) {
        case ExperimentKind::synthetic_id: run_synthetic(); break;
        case ExperimentKind::vetting: build_groups(); break;
        default:
          build_groups();
          run_units();
          if (opts_.analysis) analyze();
      }
      if (opts_.analysis) write_reports();
      write_record();
      write_manifest(dir_, cfg_, "complete");
    } catch (const ValidationError& e) {
      fail(e.what());
      throw;
    } catch (const std::exception& e) {
      fail(e.what());
      throw RunFault(std::string("run stopped: ") + e.what());
    }
    return summary_;
  }

  // ---- planning -------------------------------------------------------------

  struct Group {
    std::string name;
    std::string role;  // features | pnorm | part | product | vetting
    double features = 0.0;
    std::optional<double> p;
    Loss loss;
    std::vector<int> widths;
    Teacher teacher;
  };

  std::vector<UnitSpec> plan_units() const {
    std::vector<UnitSpec> units;
    for (const auto& g : group_names())
      for (int w : widths_for(g.first))
        for (int d : cfg_.students.depths)
          for (int t = 0; t < cfg_.students.trials; ++t) {
            UnitSpec u;
            u.group = g.first;
            u.width = w;
            u.depth = d;
            u.trial = t;
            u.id = g.first + "_w" + std::to_string(w) + "_d" + std::to_string(d) + "_t" + std::to_string(t);
            u.seed = derive_seed(cfg_.master_seed, {name_tag(g.first), static_cast<std::uint64_t>(w),
                                                    static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(t)});
            units.push_back(u);
          }
    return units;
  }

 private:
  ExperimentConfig cfg_;
  fs::path dir_;
  RunOptions opts_;
  std::string hash_;
  std::string started_;
  std::vector<Group> groups_;
  std::map<std::string, UnitResult> results_;
  RunSummary summary_;
  std::mutex log_mutex_;

  void log(const std::string& line) {
    if (!opts_.log) return;
    std::lock_guard lock(log_mutex_);
    *opts_.log << "[mscale] " << line << std::endl;
  }

  void fail(const std::string& message) {
    try {
      write_record();
      write_manifest(dir_, cfg_, "failed", message);
    } catch (...) {
    }
  }

  void check_existing() {
    const auto m = read_json(dir_ / "manifest.json");
    if (!m) return;
    const std::string recorded = m->value("config_hash", std::string());
    if (recorded == hash_) return;
    std::string msg = "run directory " + dir_.string() + " belongs to a different config (hash " + recorded +
                      ", this config " + hash_ + ")";
    if (m->contains("config")) {
      const auto diffs = config_diff(m->at("config"), to_json(cfg_, false));
      msg += "; differing entries:";
      for (const auto& d : diffs) msg += " " + d;
    }
    throw ValidationError(msg);
  }

  /// (group name, role) in a fixed order.
  std::vector<std::pair<std::string, std::string>> group_names() const {
    std::vector<std::pair<std::string, std::string>> out;
    switch (cfg_.kind) {
      case ExperimentKind::ts_sweep:
      case ExperimentKind::vetting:
        for (int k : cfg_.teacher.features) out.emplace_back("k" + std::to_string(k), "features");
        break;
      case ExperimentKind::pnorm_sweep:
        for (double p : cfg_.training.p_values) out.emplace_back("p" + format_double(p), "pnorm");
        break;
      case ExperimentKind::product_manifold:
        for (std::size_t i = 0; i < cfg_.product.parts.size(); ++i) out.emplace_back("part" + std::to_string(i), "part");
        out.emplace_back("product", "product");
        break;
      case ExperimentKind::synthetic_id: break;
    }
    return out;
  }

  std::vector<int> widths_for(const std::string& group) const {
    if (cfg_.kind == ExperimentKind::product_manifold && group != "product") {
      if (!cfg_.product.part_widths.empty()) return cfg_.product.part_widths;
      return {*std::max_element(cfg_.students.widths.begin(), cfg_.students.widths.end())};
    }
    return cfg_.students.widths;
  }

  MaskedTeacher create_teacher(const std::string& group, int features, std::uint64_t seed) {
    const auto& v = cfg_.teacher.vetting;
    if (v.candidates <= 1) return make_teacher(cfg_.teacher.shape, features, seed);
    log("vetting " + std::to_string(v.candidates) + " candidate teachers for " + group);
    VetOptions vo;
    vo.trials = v.trials;
    vo.grid_points = v.grid_points;
    vo.target = v.target;
    VettingResult r = vet_teachers(cfg_.teacher.shape, features, v.candidates, seed, vo, opts_.workers);
    const auto path = dir_ / "vetting" / (group + ".json");
    if (!fs::exists(path)) {
      ojson scores = ojson::array();
      for (const auto& [s, sc] : r.scores) scores.push_back({{"seed", s}, {"score", sc}});
      ojson j = {{"group", group},
                 {"features", features},
                 {"best_seed", r.best.seed()},
                 {"best_score", *r.best.vetting_score},
                 {"trials", v.trials},
                 {"grid_points", v.grid_points},
                 {"target", to_string(v.target)},
                 {"candidates", scores}};
      write_file(path, json_text(j));
    }
    return r.best;
  }

  Teacher load_or_create_teacher(const std::string& group, const std::function<Teacher()>& make) {
    const auto path = dir_ / "teachers" / (group + ".json");
    if (auto j = read_json(path)) {
      try {
        return teacher_from_json(*j);
      } catch (const Error&) {
        log("teacher record for " + group + " is unreadable; rebuilding");
      }
    }
    Teacher t = make();
    write_file(path, json_text(to_json(t)));
    return t;
  }

  void build_groups() {
    groups_.clear();
    const auto names = group_names();
    if (cfg_.kind == ExperimentKind::product_manifold) {
      std::vector<MaskedTeacher> parts;
      for (std::size_t i = 0; i < cfg_.product.parts.size(); ++i) {
        const int k = cfg_.product.parts[i];
        const std::string gname = names[i].first;
        Teacher t = load_or_create_teacher(gname, [&] {
          return Teacher(create_teacher(gname, k, derive_seed(cfg_.master_seed, {name_tag("part"), i})));
        });
        parts.push_back(t.single());
        Group g{gname, "part", static_cast<double>(k), std::nullopt, Loss::cross_entropy(), widths_for(gname), t};
        groups_.push_back(std::move(g));
      }
      Teacher prod = load_or_create_teacher("product", [&] {
        std::vector<ProductPart> pp;
        int offset = 0;
        for (const auto& m : parts) {
          pp.push_back({m, offset});
          offset += m.features();
        }
        return Teacher::product(std::move(pp));
      });
      Group g{"product", "product", static_cast<double>(prod.feature_count()), std::nullopt, Loss::cross_entropy(),
              widths_for("product"), prod};
      groups_.push_back(std::move(g));
    } else if (cfg_.kind == ExperimentKind::pnorm_sweep) {
      const int k = cfg_.teacher.features.front();
      for (std::size_t i = 0; i < names.size(); ++i) {
        Teacher t = load_or_create_teacher(names[i].first, [&] { return shared_teacher(k); });
        const double p = cfg_.training.p_values[i];
        groups_.push_back({names[i].first, "pnorm", static_cast<double>(k), p, Loss::pnorm(p), widths_for(names[i].first), t});
      }
    } else {
      for (std::size_t i = 0; i < names.size(); ++i) {
        const int k = cfg_.teacher.features[i];
        Teacher t = load_or_create_teacher(names[i].first, [&] { return shared_teacher(k); });
        Loss loss = cfg_.kind == ExperimentKind::vetting ? Loss::cross_entropy() : loss_from_string(cfg_.training.loss);
        groups_.push_back({names[i].first, cfg_.kind == ExperimentKind::vetting ? "vetting" : "features",
                           static_cast<double>(k), std::nullopt, loss, widths_for(names[i].first), t});
      }
    }
  }

  /// The teacher for a feature count: from teacher.file, or generated (and
  /// optionally vetted) from a seed that depends only on k.
  Teacher shared_teacher(int k) {
    if (cfg_.teacher.file) {
      const auto path = cfg_.base_dir / *cfg_.teacher.file;
      Teacher t;
      try {
        t = teacher_from_json(ojson::parse(read_file(path)));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("teacher.file " + path.string() + " is not valid JSON: " + e.what());
      } catch (const ParseError& e) {
        throw ValidationError(e.what());
      }
      if (t.feature_count() != k)
        throw ValidationError("teacher.file has " + std::to_string(t.feature_count()) +
                              " features but the config declares " + std::to_string(k));
      return t;
    }
    return create_teacher("k" + std::to_string(k), k, derive_seed(cfg_.master_seed, {name_tag("teacher"), static_cast<std::uint64_t>(k)}));
  }

  const Group& group(const std::string& name) const {
    for (const auto& g : groups_)
      if (g.name == name) return g;
    throw Error("unknown group " + name);
  }

  std::uint64_t group_seed(const std::string& name, std::string_view what) const {
    return derive_seed(cfg_.master_seed, {name_tag(name), name_tag(what)});
  }

  std::vector<int> student_shape(const Group& g, int width, int depth) const {
    std::vector<int> s{g.teacher.input_dim()};
    for (int i = 0; i < depth; ++i) s.push_back(width);
    s.push_back(g.teacher.output_dim());
    return s;
  }

  // ---- units ----------------------------------------------------------------

  fs::path unit_dir(const UnitSpec& u) const { return dir_ / "units" / u.id; }

  static ojson result_json(const UnitResult& r, const std::string& hash) {
    ojson j;
    j["unit"] = r.spec.id;
    j["group"] = r.spec.group;
    j["width"] = r.spec.width;
    j["depth"] = r.spec.depth;
    j["trial"] = r.spec.trial;
    j["seed"] = r.spec.seed;
    j["config_hash"] = hash;
    j["param_count"] = r.param_count;
    j["status"] = r.ok ? "ok" : "diverged";
    if (r.ok) {
      j["loss"] = r.loss;
      j["loss_se"] = r.loss_se;
      j["fit_loss"] = r.fit_loss;
      j["fit_loss_se"] = r.fit_loss_se;
      j["teacher_entropy"] = r.teacher_entropy ? ojson(*r.teacher_entropy) : ojson(nullptr);
    } else {
      j["message"] = r.message;
    }
    return j;
  }

  /// A previously finished unit, if its records are intact and match.
  std::optional<UnitResult> load_unit(const UnitSpec& u) const {
    const auto j = read_json(unit_dir(u) / "result.json");
    if (!j) return std::nullopt;
    try {
      if (j->at("config_hash").get<std::string>() != hash_ || j->at("seed").get<std::uint64_t>() != u.seed ||
          j->at("unit").get<std::string>() != u.id)
        return std::nullopt;
      UnitResult r;
      r.spec = u;
      r.param_count = j->at("param_count").get<std::size_t>();
      r.ok = j->at("status").get<std::string>() == "ok";
      if (!r.ok) {
        r.message = j->value("message", std::string());
        return r;
      }
      r.loss = j->at("loss").get<double>();
      r.loss_se = j->at("loss_se").get<double>();
      r.fit_loss = j->at("fit_loss").get<double>();
      r.fit_loss_se = j->at("fit_loss_se").get<double>();
      if (!j->at("teacher_entropy").is_null()) r.teacher_entropy = j->at("teacher_entropy").get<double>();
      if (!load_checkpoint(u)) return std::nullopt;
      return r;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  std::optional<Mlp> load_checkpoint(const UnitSpec& u) const {
    const auto j = read_json(unit_dir(u) / "checkpoint.json");
    if (!j) return std::nullopt;
    try {
      if (j->at("seed").get<std::uint64_t>() != u.seed || j->at("config_hash").get<std::string>() != hash_)
        return std::nullopt;
      Mlp net = mlp_from_json(j->at("network"));
      if (net.layer_sizes() != student_shape(group(u.group), u.width, u.depth)) return std::nullopt;
      return net;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  TrainConfig train_config(const Group& g, const UnitSpec& u) const {
    TrainConfig tc;
    tc.segments = cfg_.training.segments;
    tc.loss = g.loss;
    tc.seed = u.seed;
    tc.eval_samples = cfg_.training.eval_samples;
    tc.trace_every = cfg_.training.trace_every;
    tc.eval_seed = group_seed(g.name, "eval");
    return tc;
  }

  UnitResult train_unit(const UnitSpec& u) {
    const Group& g = group(u.group);
    const auto t0 = std::chrono::steady_clock::now();
    Mlp student = init_mlp(student_shape(g, u.width, u.depth), derive_seed(u.seed, {name_tag("init")}));
    UnitResult r;
    r.spec = u;
    r.param_count = student.param_count();
    const fs::path udir = unit_dir(u);
    fs::remove(udir / "result.json");
    try {
      TrainResult tr = train(std::move(student), g.teacher, train_config(g, u));
      r.ok = true;
      r.loss = tr.eval.loss;
      r.loss_se = tr.eval.loss_se;
      r.fit_loss = tr.eval.excess;
      r.fit_loss_se = tr.eval.excess_se;
      r.teacher_entropy = tr.eval.teacher_entropy;
      write_file(udir / "trace.csv", trace_csv(tr.trace));
      ojson ck = {{"unit", u.id}, {"seed", u.seed}, {"config_hash", hash_}, {"network", to_json(tr.net)}};
      write_file(udir / "checkpoint.json", json_text(ck));
    } catch (const DivergenceError& e) {
      r.ok = false;
      r.message = e.what();
      write_file(udir / "trace.csv", trace_csv(e.trace()));
    }
    write_file(udir / "result.json", json_text(result_json(r, hash_)));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log("unit " + u.id + " N=" + std::to_string(r.param_count) +
        (r.ok ? " loss=" + format_double(r.fit_loss) : " diverged: " + r.message) + " (" +
        std::to_string(static_cast<int>(secs + 0.5)) + "s)");
    return r;
  }

  void run_units() {
    const auto units = plan_units();
    std::vector<UnitSpec> pending;
    for (const auto& u : units) {
      if (auto r = load_unit(u)) {
        results_[u.id] = *r;
        ++summary_.units_reused;
      } else {
        pending.push_back(u);
      }
    }
    log(std::to_string(units.size()) + " units, " + std::to_string(pending.size()) + " to train on " +
        std::to_string(opts_.workers) + " worker(s)");
    std::vector<UnitResult> fresh(pending.size());
    parallel_for(pending.size(), opts_.workers, [&](std::size_t i) { fresh[i] = train_unit(pending[i]); });
    for (auto& r : fresh) {
      results_[r.spec.id] = r;
      ++summary_.units_trained;
    }
    for (const auto& [id, r] : results_)
      if (!r.ok) {
        ++summary_.units_diverged;
        summary_.warnings.push_back("unit " + id + " diverged: " + r.message);
      }
  }

  // ---- analysis -------------------------------------------------------------

  struct SizeEntry {
    int width = 0;
    int depth = 0;
    std::size_t param_count = 0;
    std::vector<const UnitResult*> kept;  // ascending loss
    std::string key() const { return "w" + std::to_string(width) + "_d" + std::to_string(depth); }
  };

  std::vector<SizeEntry> sizes_for(const Group& g) const {
    std::vector<SizeEntry> sizes;
    for (int w : g.widths)
      for (int d : cfg_.students.depths) {
        SizeEntry s;
        s.width = w;
        s.depth = d;
        for (const auto& [id, r] : results_)
          if (r.spec.group == g.name && r.spec.width == w && r.spec.depth == d && r.ok) s.kept.push_back(&r);
        if (s.kept.empty()) continue;
        std::sort(s.kept.begin(), s.kept.end(), [](const UnitResult* a, const UnitResult* b) {
          return a->fit_loss != b->fit_loss ? a->fit_loss < b->fit_loss : a->spec.trial < b->spec.trial;
        });
        if (s.kept.size() > static_cast<std::size_t>(cfg_.students.keep)) s.kept.resize(static_cast<std::size_t>(cfg_.students.keep));
        s.param_count = s.kept.front()->param_count;
        sizes.push_back(std::move(s));
      }
    std::sort(sizes.begin(), sizes.end(), [](const SizeEntry& a, const SizeEntry& b) {
      return a.param_count != b.param_count ? a.param_count < b.param_count : a.depth < b.depth;
    });
    return sizes;
  }

  LossCurve curve_for(const Group& g, const std::vector<SizeEntry>& sizes) const {
    LossCurve c;
    c.loss_kind = g.loss.kind == LossKind::cross_entropy_logits ? "kl" : to_string(g.loss);
    for (const auto& s : sizes) {
      if (cfg_.students.aggregation == Aggregation::hull_of_kept) {
        for (const auto* r : s.kept)
          c.points.push_back({static_cast<double>(r->param_count), r->fit_loss, s.width, s.depth, r->spec.seed});
      } else {
        double sum = 0.0;
        for (const auto* r : s.kept) sum += r->fit_loss;
        c.points.push_back({static_cast<double>(s.param_count), sum / static_cast<double>(s.kept.size()), s.width,
                            s.depth, s.kept.front()->spec.seed});
      }
    }
    c.sort_by_n();
    return c;
  }

  /// Prefinal activations of a trained student on the group's shared inputs.
  PointCloud activations(const Group& g, const SizeEntry& s) {
    const fs::path path = dir_ / "activations" / (g.name + "_" + s.key() + ".csv");
    if (fs::exists(path)) {
      try {
        return load_cloud(path);
      } catch (const Error&) {
        log("activation dump " + path.filename().string() + " is unreadable; regenerating");
      }
    }
    const UnitResult& best = *s.kept.front();
    auto net = load_checkpoint(best.spec);
    if (!net) throw Error("checkpoint for unit " + best.spec.id + " is missing or damaged");
    Rng rng(group_seed(g.name, "activations"));
    const Matrix x = g.teacher.sample_inputs(rng, cfg_.id.vectors);
    RowMatrix act = prefinal_activations(*net, x);
    write_file(path, cloud_to_csv(act));
    return PointCloud(std::move(act));
  }

  ojson id_record(const Group& g, const SizeEntry& s) {
    const fs::path path = dir_ / "id" / (g.name + "_" + s.key() + ".json");
    if (auto j = read_json(path)) return *j;
    ojson j = {{"group", g.name},
               {"unit", s.kept.front()->spec.id},
               {"width", s.width},
               {"depth", s.depth},
               {"param_count", s.param_count},
               {"vectors", cfg_.id.vectors}};
    try {
      const PointCloud cloud = activations(g, s);
      j["estimate"] = to_json(estimate_id(cloud, cfg_.id.method, cfg_.id.k, {}, {opts_.workers}));
    } catch (const ValidationError& e) {
      j["estimate"] = nullptr;
      j["error"] = e.what();
    }
    write_file(path, json_text(j));
    return j;
  }

  void diagnostics(const Group& g, const SizeEntry& s) {
    if (cfg_.id.profile_counts.empty() && cfg_.id.k_scan.empty() && !cfg_.id.mle_k) return;
    const fs::path path = dir_ / "diagnostics" / (g.name + ".json");
    const fs::path pp_path = dir_ / "diagnostics" / (g.name + "_mle_per_point.csv");
    if (fs::exists(path) && (!cfg_.id.mle_k || fs::exists(pp_path))) return;
    const PointCloud cloud = activations(g, s);
    ojson j = {{"group", g.name}, {"unit", s.kept.front()->spec.id}, {"param_count", s.param_count}};
    try {
      if (!cfg_.id.profile_counts.empty()) {
        const IdProfile prof = id_vs_pointcount(cloud, cfg_.id.method, cfg_.id.k, cfg_.id.profile_counts,
                                                group_seed(g.name, "profile"), {opts_.workers});
        ojson rows = ojson::array();
        for (const auto& e : prof.entries) rows.push_back({{"n", e.n}, {"d_hat", e.estimate.d_hat}});
        j["profile"] = {{"method", to_string(cfg_.id.method)}, {"k", cfg_.id.k}, {"entries", rows}, {"warnings", prof.warnings}};
      }
      if (!cfg_.id.k_scan.empty()) {
        const int kmax = *std::max_element(cfg_.id.k_scan.begin(), cfg_.id.k_scan.end());
        const NeighborRatios ratios = neighbor_ratios(cloud, kmax, {opts_.workers});
        ojson rows = ojson::array();
        for (int k : cfg_.id.k_scan) rows.push_back({{"k", k}, {"d_hat", estimate_id_knn(ratios, k).d_hat}});
        j["k_scan"] = rows;
      }
      if (cfg_.id.mle_k) {
        const IdEstimate e = estimate_id_mle(cloud, *cfg_.id.mle_k, true, {opts_.workers});
        j["mle"] = to_json(e);
        write_file(pp_path, per_point_csv(e));
      }
    } catch (const ValidationError& e) {
      j["error"] = e.what();
    }
    write_file(path, json_text(j));
  }

  void analyze() {
    for (const auto& g : groups_) {
      const auto sizes = sizes_for(g);
      if (sizes.empty()) {
        summary_.warnings.push_back("group " + g.name + " has no finished students");
        continue;
      }
      log("analysing group " + g.name);
      const LossCurve curve = curve_for(g, sizes);
      const fs::path curve_path = dir_ / "curves" / (g.name + ".csv");
      if (!fs::exists(curve_path)) write_file(curve_path, loss_curve_csv(curve));

      std::optional<PowerLawFit> fit;
      std::optional<NMax> nmax;
      std::string fit_error;
      try {
        FitOptions fo;
        fo.hull_filter = cfg_.analysis.hull_filter;
        fo.n_min = cfg_.analysis.n_min;
        fit = fit_power_law(curve, fo);
        if (cfg_.analysis.loss_threshold && fit->alpha > 0.0)
          nmax = n_max_at_loss_threshold(*fit, *cfg_.analysis.loss_threshold);
      } catch (const ValidationError& e) {
        fit_error = e.what();
        summary_.warnings.push_back("group " + g.name + ": no power-law fit (" + fit_error + ")");
      }
      const fs::path fit_path = dir_ / "fits" / (g.name + ".json");
      if (fit && !fs::exists(fit_path)) {
        ojson fj = {{"group", g.name}};
        fj.update(to_json(*fit, nmax));
        write_file(fit_path, json_text(fj));
      }

      ojson ids = ojson::array();
      std::optional<double> d_largest;
      double d_sum = 0.0;
      int d_count = 0;
      for (const auto& s : sizes) {
        const ojson rec = id_record(g, s);
        if (!fs::exists(dir_ / "activations" / (g.name + "_" + s.key() + ".csv"))) activations(g, s);
        const bool ok = rec.contains("estimate") && !rec.at("estimate").is_null();
        const ojson d = ok ? rec.at("estimate").at("d_hat") : ojson(nullptr);
        ids.push_back({{"width", s.width}, {"depth", s.depth}, {"param_count", s.param_count}, {"d_hat", d}});
        if (ok) {
          d_largest = d.get<double>();
          d_sum += d.get<double>();
          ++d_count;
        }
      }
      diagnostics(g, sizes.back());

      ojson gj;
      gj["group"] = g.name;
      gj["role"] = g.role;
      gj["features"] = g.features;
      gj["p"] = g.p ? ojson(*g.p) : ojson(nullptr);
      gj["loss_kind"] = curve.loss_kind;
      gj["id_source"] = to_string(cfg_.id.source);
      std::optional<double> d_hat = cfg_.id.source == IdSource::largest
                                        ? d_largest
                                        : (d_count ? std::optional<double>(d_sum / d_count) : std::nullopt);
      gj["d_hat"] = d_hat ? ojson(*d_hat) : ojson(nullptr);
      if (fit) {
        gj["alpha"] = fit->alpha;
        gj["alpha_se"] = fit->alpha_se;
        gj["c"] = fit->c;
        gj["four_over_alpha"] = 4.0 / fit->alpha;
        gj["n_points_used"] = fit->n_points_used;
        gj["n_max_empirical"] = n_max_empirical(*fit);
        gj["n_max_threshold"] = nmax ? ojson(nmax->n_max) : ojson(nullptr);
        gj["extrapolated"] = nmax ? ojson(nmax->extrapolated) : ojson(nullptr);
        gj["loss_threshold"] = cfg_.analysis.loss_threshold ? ojson(*cfg_.analysis.loss_threshold) : ojson(nullptr);
      } else {
        gj["alpha"] = nullptr;
        gj["fit_error"] = fit_error;
      }
      gj["sizes"] = sizes.size();
      gj["ids"] = ids;
      const fs::path gpath = dir_ / "groups" / (g.name + ".json");
      if (!fs::exists(gpath)) write_file(gpath, json_text(gj));
      summary_.groups.push_back(gj);
    }
  }

  // ---- synthetic manifolds --------------------------------------------------

  void run_synthetic() {
    const auto& s = cfg_.synthetic;
    for (const auto& m : s.manifolds)
      for (int d : s.dims) {
        const std::string name = m + "_d" + std::to_string(d);
        const fs::path path = dir_ / "synthetic" / (name + ".json");
        bool complete = fs::exists(path);
        for (const auto& e : s.estimators)
          if (e.method != IdMethod::knn_cumulative &&
              !fs::exists(dir_ / "synthetic" / (name + "_" + to_string(e.method) + "_k" + std::to_string(e.k) + "_per_point.csv")))
            complete = false;
        if (complete) continue;
        log("synthetic " + name);
        const std::uint64_t seed = derive_seed(cfg_.master_seed, {name_tag(name)});
        const PointCloud cloud = m == "hypercube" ? sample_hypercube(d, s.points, seed) : sample_torus(d, s.points, seed);
        ojson j = {{"group", name}, {"manifold", m}, {"d", d}, {"points", s.points}, {"seed", seed}};
        ojson ests = ojson::array(), profiles = ojson::array();
        for (const auto& e : s.estimators) {
          const IdEstimate est = estimate_id(cloud, e.method, e.k, {}, {opts_.workers});
          ests.push_back(to_json(est));
          if (!est.per_point.empty())
            write_file(dir_ / "synthetic" / (name + "_" + to_string(e.method) + "_k" + std::to_string(e.k) + "_per_point.csv"),
                       per_point_csv(est));
          if (!s.counts.empty()) {
            const IdProfile prof = id_vs_pointcount(cloud, e.method, e.k, s.counts,
                                                    derive_seed(seed, {name_tag("profile")}), {opts_.workers});
            ojson rows = ojson::array();
            for (const auto& pe : prof.entries) rows.push_back({{"n", pe.n}, {"d_hat", pe.estimate.d_hat}});
            profiles.push_back({{"method", to_string(e.method)}, {"k", e.k}, {"entries", rows}, {"warnings", prof.warnings}});
          }
        }
        j["estimates"] = ests;
        j["profiles"] = profiles;
        write_file(path, json_text(j));
      }
  }

  // ---- records --------------------------------------------------------------

  void write_reports() {
    for (const auto& fig : applicable_figures(dir_)) {
      if (fs::exists(dir_ / "reports" / (fig + ".csv")) && fs::exists(dir_ / "reports" / (fig + ".svg"))) continue;
      write_report(dir_, fig);
    }
  }

  void write_record() {
    ojson units = ojson::array();
    for (const auto& u : plan_units()) {
      auto it = results_.find(u.id);
      ojson r = {{"unit", u.id}, {"group", u.group}, {"width", u.width}, {"depth", u.depth}, {"trial", u.trial}, {"seed", u.seed}};
      if (it == results_.end()) {
        r["status"] = "pending";
      } else {
        r["param_count"] = it->second.param_count;
        r["status"] = it->second.ok ? "ok" : "diverged";
        r["fit_loss"] = it->second.ok ? ojson(it->second.fit_loss) : ojson(nullptr);
        r["checkpoint"] = it->second.ok ? ojson("units/" + u.id + "/checkpoint.json") : ojson(nullptr);
        r["trace"] = "units/" + u.id + "/trace.csv";
      }
      units.push_back(r);
    }
    ojson rec;
    rec["name"] = cfg_.name;
    rec["kind"] = to_string(cfg_.kind);
    rec["config_hash"] = hash_;
    rec["master_seed"] = cfg_.master_seed;
    rec["started_at"] = started_;
    rec["finished_at"] = utc_timestamp();
    rec["units"] = units;
    rec["groups"] = summary_.groups;
    rec["warnings"] = summary_.warnings;
    write_file(dir_ / "run_record.json", json_text(rec));
  }
};

/// Runs (or completes) the experiment described by `cfg` in `dir`.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const fs::path& dir, RunOptions opts = {}) {
  Runner r(cfg, dir, opts);
  auto s = r.run();
  s.config_hash = r.hash();
  return s;
}

/// Completes the run recorded in `dir`. When `expected` is given, its hash
/// must match the manifest.
inline RunSummary resume_experiment(const fs::path& dir, RunOptions opts = {},
                                    const std::optional<ExperimentConfig>& expected = std::nullopt) {
  ExperimentConfig cfg = config_from_manifest(dir);
  if (expected && config_hash(*expected) != config_hash(cfg)) {
    std::string msg = "config hash " + config_hash(*expected) + " does not match the run's " + config_hash(cfg) +
                      "; differing entries:";
    for (const auto& d : config_diff(to_json(cfg, false), to_json(*expected, false))) msg += " " + d;
    throw ValidationError(msg);
  }
  return run_experiment(cfg, dir, opts);
}

}  // namespace mscale
