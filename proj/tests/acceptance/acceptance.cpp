// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance_suite [--runs DIR] [criterion ...]
//
// Criteria 6-9 train full student sweeps. Their run directories live under
// --runs (default: MSCALE_ACCEPTANCE_RUNS or ./acceptance_runs) and are
// resumed when present, so a second invocation only re-checks the results.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mscale/experiment/config.hpp"
#include "mscale/experiment/report.hpp"
#include "mscale/experiment/runner.hpp"
#include "mscale/id_estimation.hpp"
#include "mscale/kl_scaling.hpp"
#include "mscale/point_cloud.hpp"
#include "mscale/rng.hpp"
#include "mscale/scaling.hpp"
#include "oracles.hpp"

using namespace mscale;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    pass = pass && ok;
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

fs::path g_runs;

RunOptions run_options() {
  RunOptions o;
  o.log = &std::cerr;
  return o;
}

RunSummary run_config(const std::string& name, const fs::path& dir) {
  const ExperimentConfig cfg = load_config(fs::path(MSCALE_SOURCE_DIR) / "tests/acceptance/configs" / name);
  return run_experiment(cfg, dir, run_options());
}

const ojson* group(const RunSummary& s, const std::string& name) {
  for (const auto& g : s.groups)
    if (g.at("group") == name) return &g;
  return nullptr;
}

bool has(const ojson& g, const char* key) { return g.contains(key) && g.at(key).is_number(); }

// ---- 1 ----------------------------------------------------------------------

Outcome estimator_oracles() {
  Outcome o;
  for (double d : {2.0, 5.0, 10.0, 20.0}) {
    const auto mu = oracle::mu2_stream(d, 50000, 1000 + static_cast<std::uint64_t>(d));
    RowMatrix m(50000, 1);
    for (std::size_t i = 0; i < mu.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = mu[i];
    const double knn = estimate_id_knn(NeighborRatios::from_matrix(std::move(m)), 2).d_hat;
    o.check(std::abs(knn - d) <= 0.02 * d, "knn k=2, d=" + fmt(d) + ": d_hat=" + fmt(knn) + " (within 2%)");

    const auto rows = oracle::poisson_ratios(d, 100, 50000, 2000 + static_cast<std::uint64_t>(d));
    RowMatrix r(50000, 99);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < 99; ++j) r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    const double mle = estimate_id_mle(NeighborRatios::from_matrix(std::move(r)), 100, true).d_hat;
    o.check(std::abs(mle - d) <= 0.05 * d, "unbiased MLE k=100, d=" + fmt(d) + ": d_hat=" + fmt(mle) + " (within 5%)");
  }
  return o;
}

// ---- 2 ----------------------------------------------------------------------

Outcome synthetic_manifolds() {
  Outcome o;
  const unsigned workers = default_workers();
  for (int d : {2, 4, 8, 16}) {
    const double e = estimate_id_knn(sample_hypercube(d, 10000, 300 + static_cast<std::uint64_t>(d)), 2, {}, {workers}).d_hat;
    o.check(e >= 0.85 * d && e <= d, "hypercube d=" + std::to_string(d) + ": d_hat=" + fmt(e) + " in [" +
                                         fmt(0.85 * d) + ", " + std::to_string(d) + "]");
  }
  for (int d : {2, 4, 8}) {
    const double e = estimate_id_knn(sample_torus(d, 10000, 400 + static_cast<std::uint64_t>(d)), 2, {}, {workers}).d_hat;
    o.check(e >= 0.85 * d && e <= 1.3 * d, "torus d=" + std::to_string(d) + ": d_hat=" + fmt(e) + " in [" +
                                               fmt(0.85 * d) + ", " + fmt(1.3 * d) + "]");
  }
  return o;
}

// ---- 3 ----------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  Rng rng(31337);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  const double p_choices[] = {1.25, 1.5, 2.0, 3.0, 4.0};
  for (int t = 0; t < 200; ++t) {
    const int layers = 2 + static_cast<int>(rng() % 3);  // 1..3 hidden layers
    std::vector<int> sizes{1 + static_cast<int>(rng() % 6)};
    for (int l = 0; l < layers - 1; ++l) sizes.push_back(2 + static_cast<int>(rng() % 7));
    Loss loss;
    switch (rng() % 3) {
      case 0: loss = Loss::mse(); break;
      case 1: loss = Loss::cross_entropy(); break;
      default: loss = Loss::pnorm(p_choices[rng() % 5]); break;
    }
    sizes.push_back(loss.kind == LossKind::cross_entropy_logits ? 2 + static_cast<int>(rng() % 3)
                                                                 : 1 + static_cast<int>(rng() % 3));
    const Mlp net = init_mlp(sizes, rng());
    const auto batch = static_cast<Eigen::Index>(1 + rng() % 8);
    Matrix x(batch, sizes.front()), target(batch, sizes.back());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();
    const auto r = gradcheck::check(net, x, loss, target);
    worst = std::max(worst, r.max_rel);
    checked += r.checked;
    skipped += r.skipped;
  }
  o.check(worst < 1e-4, "200 random triples: max relative error " + fmt(worst, 3) + " < 1e-4 (" +
                            std::to_string(checked) + " parameters checked, " + std::to_string(skipped) +
                            " skipped at ReLU/p-norm kinks)");
  o.check(checked > 20 * skipped, "kink skips are rare");
  return o;
}

// ---- 4 ----------------------------------------------------------------------

Outcome kl_quartic() {
  Outcome o;
  const std::vector<double> sides = {0.2, 0.1, 0.05, 0.025};
  for (int dim : {1, 2}) {
    const SmoothLogits f(dim, 3, 4, 500 + static_cast<std::uint64_t>(dim));
    const double slope = kl_scaling_slope(f, Eigen::VectorXd::Constant(dim, 0.1), sides).slope;
    o.check(std::abs(slope - 4.0) <= 0.2, std::to_string(dim) + "D target: slope " + fmt(slope) + " (4.0 +- 0.2)");
  }
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome power_law_machinery() {
  Outcome o;
  const double c = 12.5, alpha = 0.65;
  LossCurve curve;
  curve.loss_kind = "kl";
  for (int i = 0; i < 10; ++i) {
    const double n = 100.0 * std::pow(1.6, i);
    curve.points.push_back({n, c * std::pow(n, -alpha), 0, 2, 0});
  }
  const double break_n = curve.points.back().n, floor = curve.points.back().loss;
  for (int i = 1; i <= 5; ++i) curve.points.push_back({break_n * std::pow(1.6, i), floor, 0, 2, 0});
  const PowerLawFit f = fit_power_law(curve);
  o.check(std::abs(f.alpha - alpha) <= 1e-9, "alpha " + fmt(f.alpha, 15) + " (true 0.65, tol 1e-9)");
  o.check(std::abs(f.c - c) <= 1e-9 * c, "c " + fmt(f.c, 15) + " (true 12.5, relative tol 1e-9)");
  o.check(f.n_fit_max == break_n && f.n_points_used == 10,
          "break located at N=" + fmt(f.n_fit_max, 10) + " with " + std::to_string(f.n_points_used) + " points");
  return o;
}

// ---- 6 and 9 ----------------------------------------------------------------

RunSummary& alpha_dimension_run() {
  static RunSummary s = run_config("alpha_vs_dimension.json", g_runs / "alpha_vs_dimension");
  return s;
}

Outcome alpha_dimension() {
  Outcome o;
  const RunSummary& s = alpha_dimension_run();
  double prev = 0.0;
  for (int k : {2, 3, 5}) {
    const ojson* g = group(s, "k" + std::to_string(k));
    if (!g || !has(*g, "alpha") || !has(*g, "d_hat")) {
      o.check(false, "k=" + std::to_string(k) + ": missing fit or ID");
      continue;
    }
    const double inv = g->at("four_over_alpha").get<double>(), d = g->at("d_hat").get<double>();
    o.check(std::abs(inv - d) <= 0.35 * d, "k=" + std::to_string(k) + ": 4/alpha=" + fmt(inv) + ", d_hat=" + fmt(d) +
                                                " (ratio " + fmt(inv / d) + ", band 0.65..1.35)");
    o.check(inv > prev, "k=" + std::to_string(k) + ": 4/alpha increases with k");
    prev = inv;
  }
  return o;
}

Outcome n_max_trend() {
  Outcome o;
  const RunSummary& s = alpha_dimension_run();
  std::vector<std::pair<double, double>> pts;  // (d_hat, log10 N_max)
  for (int k : {2, 3, 5}) {
    const ojson* g = group(s, "k" + std::to_string(k));
    if (!g || !has(*g, "n_max_threshold") || !has(*g, "d_hat")) {
      o.check(false, "k=" + std::to_string(k) + ": no threshold N_max");
      return o;
    }
    const double nm = g->at("n_max_threshold").get<double>();
    pts.emplace_back(g->at("d_hat").get<double>(), std::log10(nm));
    o.notes.push_back("     k=" + std::to_string(k) + ": d_hat=" + fmt(pts.back().first) + ", log10 N_max=" +
                      fmt(pts.back().second) + (g->at("extrapolated").get<bool>() ? " (extrapolated)" : ""));
  }
  std::sort(pts.begin(), pts.end());
  bool increasing = true;
  for (std::size_t i = 1; i < pts.size(); ++i) increasing = increasing && pts[i].second > pts[i - 1].second;
  o.check(increasing, "log N_max strictly increasing in measured d (rank correlation 1)");
  return o;
}

// ---- 7 ----------------------------------------------------------------------

Outcome generalized_loss() {
  Outcome o;
  const RunSummary s = run_config("generalized_loss.json", g_runs / "generalized_loss");
  std::map<double, double> alpha;
  for (const auto& g : s.groups)
    if (has(g, "p") && has(g, "alpha")) alpha[g.at("p").get<double>()] = g.at("alpha").get<double>();
  if (alpha.size() != 3) {
    o.check(false, "expected fits for p = 1, 2, 4; got " + std::to_string(alpha.size()));
    return o;
  }
  std::vector<double> ps, as;
  for (const auto& [p, a] : alpha) {
    ps.push_back(p);
    as.push_back(a);
    o.notes.push_back("     p=" + fmt(p) + ": alpha=" + fmt(a));
  }
  const LineFit line = ols(ps, as);
  // Two-sided 95% t quantile with n - 2 = 1 degree of freedom.
  const double t95 = 12.706;
  o.check(std::abs(line.intercept) <= t95 * line.intercept_se,
          "alpha vs p: slope " + fmt(line.slope) + ", intercept " + fmt(line.intercept) + " +- " +
              fmt(line.intercept_se) + " (consistent with 0 at 95%), R^2 " + fmt(line.r2));
  const double ratio = alpha[4.0] / alpha[2.0];
  o.check(std::abs(ratio - 2.0) <= 0.4, "alpha(4)/alpha(2) = " + fmt(ratio) + " (2.0 +- 0.4)");
  return o;
}

// ---- 8 ----------------------------------------------------------------------

Outcome product_manifold() {
  Outcome o;
  const RunSummary s = run_config("product_manifold.json", g_runs / "product_manifold");
  const ojson *p0 = group(s, "part0"), *p1 = group(s, "part1"), *prod = group(s, "product");
  if (!p0 || !p1 || !prod || !has(*p0, "d_hat") || !has(*p1, "d_hat") || !has(*prod, "d_hat") ||
      !has(*prod, "alpha")) {
    o.check(false, "missing part IDs or product fit");
    return o;
  }
  const double d1 = p0->at("d_hat").get<double>(), d2 = p1->at("d_hat").get<double>();
  const double dt = prod->at("d_hat").get<double>();
  const double a = prod->at("alpha").get<double>(), ase = prod->at("alpha_se").get<double>();
  const double inv = 4.0 / a, inv_se = 4.0 * ase / (a * a);
  const double sum = d1 + d2, mx = std::max(d1, d2);
  o.notes.push_back("     d1=" + fmt(d1) + ", d2=" + fmt(d2) + ", product d_hat=" + fmt(dt) + ", 4/alpha=" + fmt(inv) +
                    " +- " + fmt(inv_se));
  o.check(std::abs(dt - sum) <= 0.25 * sum, "product ID within 25% of d1+d2=" + fmt(sum));
  o.check(std::abs(inv - mx) <= 0.35 * mx, "4/alpha within 35% of max(d_i)=" + fmt(mx));
  o.check(inv + 2.0 * inv_se < sum, "4/alpha + 2 se = " + fmt(inv + 2.0 * inv_se) + " below d1+d2");
  return o;
}

// ---- 10 ---------------------------------------------------------------------

std::map<std::string, std::string> data_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "run_record.json" || rel == "manifest.json") continue;
    out[rel] = read_file(e.path());
  }
  return out;
}

Outcome determinism() {
  Outcome o;
  const ExperimentConfig cfg = load_config(fs::path(MSCALE_SOURCE_DIR) / "samples/configs/mini_ts.json");
  const fs::path a = g_runs / "determinism_a", b = g_runs / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  RunOptions opts = run_options();
  std::ostringstream sink;
  opts.log = &sink;
  run_experiment(cfg, a, opts);
  run_experiment(cfg, b, opts);
  const auto fa = data_files(a), fb = data_files(b);
  o.check(fa == fb, "two runs: " + std::to_string(fa.size()) + " data files byte-identical");

  std::vector<std::string> analysis;
  for (const auto& [name, data] : fa)
    if (name.rfind("units/", 0) != 0 && name.rfind("teachers/", 0) != 0 && name != "config.json")
      analysis.push_back(name);
  std::size_t restored = 0;
  std::string broken;
  for (const auto& name : analysis) {
    fs::remove(a / name);
    resume_experiment(a, opts);
    if (data_files(a) == fa)
      ++restored;
    else
      broken += " " + name;
  }
  o.check(broken.empty(), "each of " + std::to_string(analysis.size()) + " analysis artifacts deleted and resumed: " +
                              std::to_string(restored) + " restored byte-identically" +
                              (broken.empty() ? "" : "; not restored:" + broken));
  fs::remove_all(a);
  fs::remove_all(b);
  return o;
}

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
  double max_seconds;  // 0: reported only
};

}  // namespace

int main(int argc, char** argv) {
  const char* env = std::getenv("MSCALE_ACCEPTANCE_RUNS");
  g_runs = env ? fs::path(env) : fs::current_path() / "acceptance_runs";
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--runs" && i + 1 < argc) {
      g_runs = argv[++i];
    } else {
      try {
        wanted.push_back(std::stoi(a));
      } catch (const std::exception&) {
        std::cerr << "usage: acceptance_suite [--runs DIR] [criterion ...]\n";
        return 1;
      }
    }
  }
  fs::create_directories(g_runs);

  const std::vector<Criterion> all = {
      {1, "estimator oracle recovery", estimator_oracles, 30},
      {2, "synthetic manifold IDs", synthetic_manifolds, 120},
      {3, "gradient correctness", gradients, 60},
      {4, "KL quartic scaling", kl_quartic, 60},
      {5, "power-law fit machinery", power_law_machinery, 1},
      {6, "alpha-d relation", alpha_dimension, 0},
      {7, "generalized-loss slope", generalized_loss, 0},
      {8, "product-manifold ensembling", product_manifold, 0},
      {9, "N_max trend", n_max_trend, 0},
      {10, "determinism and resumability", determinism, 300},
  };

  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.max_seconds > 0) o.check(secs < c.max_seconds, "runtime " + fmt(secs, 3) + " s < " + fmt(c.max_seconds) + " s");
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.title << " (" << fmt(secs, 3)
              << " s)\n";
    for (const auto& n : o.notes) std::cout << "        " << n << "\n";
    std::cout.flush();
    failures += o.pass ? 0 : 1;
  }
  return failures ? 1 : 0;
}
