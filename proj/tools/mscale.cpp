// Command-line front end. Exit codes: 0 success, 1 usage error,
// 2 validation error, 3 runtime fault (partial results may exist).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mscale/errors.hpp"
#include "mscale/experiment/config.hpp"
#include "mscale/experiment/report.hpp"
#include "mscale/experiment/runner.hpp"
#include "mscale/id_estimation.hpp"
#include "mscale/parallel.hpp"
#include "mscale/point_cloud.hpp"
#include "mscale/scaling.hpp"
#include "mscale/teachers.hpp"
#include "mscale/text_io.hpp"

namespace fs = std::filesystem;
using namespace mscale;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInvalid = 2, kFault = 3 };

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_file(out, text);
}

fs::path run_dir_for(const ExperimentConfig& cfg, const std::string& out) {
  if (!out.empty()) return out;
  if (!cfg.output_dir.empty()) return cfg.base_dir / cfg.output_dir;
  throw ValidationError("no output directory: pass --out or set output_dir in the config");
}

void print_summary(const RunSummary& s, const fs::path& dir) {
  std::cout << "run directory: " << dir.string() << "\n";
  std::cout << "config hash:   " << s.config_hash << "\n";
  std::cout << "units trained: " << s.units_trained << ", reused: " << s.units_reused
            << ", diverged: " << s.units_diverged << "\n";
  for (const auto& g : s.groups) {
    std::cout << "  " << g.at("group").get<std::string>() << ": d_hat=";
    std::cout << (g.at("d_hat").is_null() ? std::string("n/a") : format_double(g.at("d_hat").get<double>()));
    if (!g.at("alpha").is_null())
      std::cout << " alpha=" << format_double(g.at("alpha").get<double>())
                << " 4/alpha=" << format_double(g.at("four_over_alpha").get<double>());
    std::cout << "\n";
  }
  for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string f = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(f, &used));
      if (used != f.size()) throw std::invalid_argument(f);
    } catch (const std::exception&) {
      throw ValidationError("bad integer list '" + s + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mscale: intrinsic dimension and neural scaling experiments"};
  app.require_subcommand(1);
  app.fallthrough();  // --workers may follow the subcommand
  unsigned workers = 0;
  app.add_option("--workers", workers, "Worker threads (default: MSCALE_WORKERS or all cores)");

  // sample
  auto* sample = app.add_subcommand("sample", "Sample a synthetic manifold to CSV");
  std::string manifold = "hypercube", sample_out;
  int dim = 2;
  std::size_t points = 10000;
  std::uint64_t seed = 0;
  sample->add_option("--manifold", manifold, "hypercube or torus")->check(CLI::IsMember({"hypercube", "torus"}));
  sample->add_option("--dim", dim, "Intrinsic dimension d")->required();
  sample->add_option("--points", points, "Number of points");
  sample->add_option("--seed", seed, "Seed");
  sample->add_option("--out", sample_out, "Output CSV (default stdout)");

  // estimate-id
  auto* est = app.add_subcommand("estimate-id", "Estimate the intrinsic dimension of a point cloud");
  std::string est_in, est_method = "knn_cumulative", est_out, est_per_point, est_counts;
  int est_k = 2;
  double discard = 0.0;
  std::uint64_t est_seed = 0;
  est->add_option("input", est_in, "Point-cloud CSV")->required();
  est->add_option("--method", est_method, "knn_cumulative, mle_biased or mle_unbiased")
      ->check(CLI::IsMember({"knn_cumulative", "mle_biased", "mle_unbiased"}));
  est->add_option("--k", est_k, "Neighbour count");
  est->add_option("--discard-fraction", discard, "Drop this fraction of the largest ratios from the regression");
  est->add_option("--counts", est_counts, "Comma-separated subsample sizes for an ID-vs-count profile");
  est->add_option("--seed", est_seed, "Subsampling seed");
  est->add_option("--per-point", est_per_point, "Write per-point MLE values to this CSV");
  est->add_option("--out", est_out, "Output JSON (default stdout)");

  // vet
  auto* vet = app.add_subcommand("vet", "Pick the least linear of several random teachers");
  std::string vet_shape = "20,48,48,2", vet_out, vet_target = "logit_difference";
  int vet_features = 2, vet_candidates = 500, vet_trials = 50, vet_grid = 64;
  std::uint64_t vet_seed = 0;
  vet->add_option("--shape", vet_shape, "Teacher layer sizes");
  vet->add_option("--features", vet_features, "Active input features k")->required();
  vet->add_option("--candidates", vet_candidates, "Number of random teachers");
  vet->add_option("--trials", vet_trials, "Slice trials per teacher");
  vet->add_option("--grid", vet_grid, "Grid points per slice");
  vet->add_option("--target", vet_target, "Slice regression target")
      ->check(CLI::IsMember({"logit_difference", "first_output"}));
  vet->add_option("--seed", vet_seed, "Seed");
  vet->add_option("--out", vet_out, "Teacher JSON (default stdout)");

  // sweep / run / resume
  std::string cfg_path, run_out, resume_cfg;
  auto* sweep = app.add_subcommand("sweep", "Train the student units of a config (no analysis)");
  sweep->add_option("config", cfg_path, "Experiment config (JSON)")->required();
  sweep->add_option("--out", run_out, "Run directory (default: output_dir from the config)");
  auto* run = app.add_subcommand("run", "Full pipeline: train, measure ID, fit, report");
  run->add_option("config", cfg_path, "Experiment config (JSON)")->required();
  run->add_option("--out", run_out, "Run directory (default: output_dir from the config)");
  auto* resume = app.add_subcommand("resume", "Complete an interrupted or damaged run");
  std::string resume_dir;
  resume->add_option("dir", resume_dir, "Run directory")->required();
  resume->add_option("--config", resume_cfg, "Refuse unless this config matches the run");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a power law to a loss-curve CSV");
  std::string fit_in, fit_out;
  bool no_hull = false;
  std::optional<double> n_min, threshold;
  fit->add_option("curve", fit_in, "Loss-curve CSV (N,L,width,depth,seed,loss_kind)")->required();
  fit->add_flag("--no-hull", no_hull, "Skip the convex-hull filter");
  fit->add_option("--n-min", n_min, "Ignore points with N below this");
  fit->add_option("--threshold", threshold, "Loss threshold for N_max");
  fit->add_option("--out", fit_out, "Output JSON (default stdout)");

  // report
  auto* report = app.add_subcommand("report", "Write figure reports (CSV + SVG) for a run directory");
  std::string report_dir, figure = "all";
  report->add_option("dir", report_dir, "Run directory")->required();
  report->add_option("--figure", figure, "fig2, fig4, fig5, fig6, fig7, fig10, fig12, fig13, fig14, fig16 or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  RunOptions ropts;
  if (workers > 0) ropts.workers = workers;

  try {
    if (*sample) {
      const PointCloud c = manifold == "hypercube" ? sample_hypercube(dim, points, seed) : sample_torus(dim, points, seed);
      emit(cloud_to_csv(c.points()), sample_out);
    } else if (*est) {
      const PointCloud cloud = [&] {
        try {
          return load_cloud(est_in);
        } catch (const ParseError& e) {
          throw ValidationError(e.what());
        }
      }();
      const IdMethod method = id_method_from_string(est_method);
      ojson j;
      const IdEstimate e = estimate_id(cloud, method, est_k, {discard}, {ropts.workers});
      j = to_json(e);
      if (!est_counts.empty()) {
        std::vector<std::size_t> counts;
        for (int c : parse_int_list(est_counts)) {
          if (c < 1) throw ValidationError("counts must be positive");
          counts.push_back(static_cast<std::size_t>(c));
        }
        const IdProfile prof = id_vs_pointcount(cloud, method, est_k, counts, est_seed, {ropts.workers});
        ojson rows = ojson::array();
        for (const auto& pe : prof.entries) rows.push_back({{"n", pe.n}, {"d_hat", pe.estimate.d_hat}});
        j["profile"] = rows;
        for (const auto& w : prof.warnings) std::cerr << "warning: " << w << "\n";
      }
      if (!est_per_point.empty()) {
        if (e.per_point.empty()) throw ValidationError("--per-point needs an MLE method");
        write_file(est_per_point, per_point_csv(e));
      }
      emit(json_text(j), est_out);
    } else if (*vet) {
      VetOptions vo;
      vo.trials = vet_trials;
      vo.grid_points = vet_grid;
      vo.target = vet_target == "first_output" ? SliceTarget::first_output : SliceTarget::logit_difference;
      const auto shape = parse_int_list(vet_shape);
      const VettingResult r = vet_teachers(shape, vet_features, vet_candidates, vet_seed, vo, ropts.workers);
      std::cerr << "best seed " << r.best.seed() << " score " << format_double(*r.best.vetting_score) << "\n";
      emit(json_text(to_json(r.best)), vet_out);
    } else if (*sweep || *run) {
      const ExperimentConfig cfg = load_config(cfg_path);
      const fs::path dir = run_dir_for(cfg, run_out);
      ropts.analysis = static_cast<bool>(*run);
      print_summary(run_experiment(cfg, dir, ropts), dir);
    } else if (*resume) {
      std::optional<ExperimentConfig> expected;
      if (!resume_cfg.empty()) expected = load_config(resume_cfg);
      print_summary(resume_experiment(resume_dir, ropts, expected), resume_dir);
    } else if (*fit) {
      LossCurve curve;
      try {
        curve = parse_loss_curve(read_file(fit_in));
      } catch (const Error& e) {
        throw ValidationError(e.what());
      }
      FitOptions fo;
      fo.hull_filter = !no_hull;
      fo.n_min = n_min;
      const PowerLawFit f = fit_power_law(curve, fo);
      std::optional<NMax> nm;
      if (threshold) nm = n_max_at_loss_threshold(f, *threshold);
      emit(json_text(to_json(f, nm)), fit_out);
    } else if (*report) {
      for (const auto& f : write_report(report_dir, figure)) std::cout << "wrote reports/" << f << ".{csv,svg}\n";
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << "\n";
    return kFault;
  }
  return kOk;
}
