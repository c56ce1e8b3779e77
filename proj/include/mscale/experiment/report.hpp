#pragma once

// Figure-family reports built from the records in a run directory. Each
// report is a plot-ready CSV plus a static SVG rendering of the same data.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscale/errors.hpp"
#include "mscale/experiment/svg_plot.hpp"
#include "mscale/scaling.hpp"
#include "mscale/text_io.hpp"

namespace mscale {

using ojson = nlohmann::ordered_json;

inline std::string json_text(const ojson& j) { return j.dump(2) + "\n"; }

inline std::optional<ojson> read_json(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) return std::nullopt;
  try {
    return ojson::parse(read_file(p));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline const std::vector<std::string>& figure_names() {
  static const std::vector<std::string> names{"fig2",  "fig4",  "fig5",  "fig6",  "fig7",
                                              "fig10", "fig12", "fig13", "fig14", "fig16"};
  return names;
}

namespace detail {

namespace fs = std::filesystem;

inline std::vector<fs::path> list_files(const fs::path& dir, const std::string& suffix) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() >= suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<ojson> load_groups(const fs::path& dir) {
  std::vector<ojson> out;
  for (const auto& p : list_files(dir / "groups", ".json"))
    if (auto j = read_json(p)) out.push_back(*j);
  return out;
}

inline bool has_number(const ojson& j, const char* key) { return j.contains(key) && j.at(key).is_number(); }

inline std::string num(const ojson& j, const char* key) {
  return has_number(j, key) ? format_double(j.at(key).get<double>()) : std::string();
}

struct Report {
  std::string csv;
  PlotSpec plot;
};

inline std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return f;
}

inline std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    rows.push_back(csv_fields(line));
  }
  return rows;
}

inline double to_num(const std::string& s) {
  double v = 0.0;
  if (!parse_double(s, v)) throw ParseError("bad number '" + s + "' in report input");
  return v;
}

// -- individual figures ------------------------------------------------------

inline std::optional<Report> fig2(const fs::path& dir) {
  Report r;
  r.csv = "group,features,d_hat,n_max_threshold,log10_n_max,extrapolated,loss_threshold\n";
  PlotSeries s{"N_max at threshold", {}, {}, false};
  int rows = 0;
  for (const auto& g : load_groups(dir)) {
    if (g.value("role", "") != "features" || !has_number(g, "n_max_threshold")) continue;
    ++rows;
    const double nm = g.at("n_max_threshold").get<double>();
    r.csv += g.at("group").get<std::string>() + "," + num(g, "features") + "," + num(g, "d_hat") + "," +
             format_double(nm) + "," + format_double(std::log10(nm)) + "," +
             (g.at("extrapolated").get<bool>() ? "true" : "false") + "," + num(g, "loss_threshold") + "\n";
    if (has_number(g, "d_hat")) {
      s.x.push_back(g.at("d_hat").get<double>());
      s.y.push_back(nm);
    }
  }
  if (rows == 0) return std::nullopt;
  r.plot = {"N_max at a fixed loss threshold", "measured ID", "N_max", false, true, {s}};
  return r;
}

inline std::optional<Report> fig4(const fs::path& dir) {
  const auto curves = list_files(dir / "curves", ".csv");
  if (curves.empty()) return std::nullopt;
  Report r;
  r.csv = "group,N,L,L_fit,in_fit\n";
  r.plot = {"Loss versus parameter count", "N (parameters)", "L", true, true, {}};
  for (const auto& path : curves) {
    const std::string g = path.stem().string();
    const auto fit = read_json(dir / "fits" / (g + ".json"));
    PlotSeries pts{g, {}, {}, false}, line{g + " fit", {}, {}, true};
    for (const auto& row : csv_rows(read_file(path))) {
      if (row.size() < 2) throw ParseError("short row in " + path.string());
      const double n = to_num(row[0]), l = to_num(row[1]);
      std::string lfit, in_fit = "false";
      if (fit) {
        const double c = fit->at("c").get<double>(), a = fit->at("alpha").get<double>();
        const double pred = c * std::pow(n, -a);
        lfit = format_double(pred);
        const auto& range = fit->at("fit_range");
        in_fit = n >= range[0].get<double>() && n <= range[1].get<double>() ? "true" : "false";
        line.x.push_back(n);
        line.y.push_back(pred);
      }
      r.csv += g + "," + row[0] + "," + row[1] + "," + lfit + "," + in_fit + "\n";
      pts.x.push_back(n);
      pts.y.push_back(l);
    }
    r.plot.series.push_back(pts);
    if (fit) r.plot.series.push_back(line);
  }
  return r;
}

inline std::optional<Report> fig5(const fs::path& dir) {
  std::vector<ojson> parts;
  std::optional<ojson> product;
  for (const auto& g : load_groups(dir)) {
    if (g.value("role", "") == "part") parts.push_back(g);
    if (g.value("role", "") == "product") product = g;
  }
  if (!product) return std::nullopt;
  Report r;
  r.csv = "group,role,features,d_hat,four_over_alpha\n";
  PlotSeries ds{"measured ID", {}, {}, false}, fs4{"4/alpha", {}, {}, false};
  double sum = 0.0, mx = 0.0;
  bool all_parts = !parts.empty();
  double x = 0.0;
  auto add = [&](const ojson& g) {
    r.csv += g.at("group").get<std::string>() + "," + g.at("role").get<std::string>() + "," + num(g, "features") + "," +
             num(g, "d_hat") + "," + num(g, "four_over_alpha") + "\n";
    x += 1.0;
    if (has_number(g, "d_hat")) {
      ds.x.push_back(x);
      ds.y.push_back(g.at("d_hat").get<double>());
    }
    if (has_number(g, "four_over_alpha")) {
      fs4.x.push_back(x);
      fs4.y.push_back(g.at("four_over_alpha").get<double>());
    }
  };
  for (const auto& g : parts) {
    add(g);
    if (has_number(g, "d_hat")) {
      sum += g.at("d_hat").get<double>();
      mx = std::max(mx, g.at("d_hat").get<double>());
    } else {
      all_parts = false;
    }
  }
  add(*product);
  if (all_parts) {
    r.csv += "sum_of_parts,summary,," + format_double(sum) + ",\n";
    r.csv += "max_of_parts,summary,," + format_double(mx) + ",\n";
  }
  r.plot = {"Product manifold: ID and 4/alpha (x = part index, last = product)", "group index", "dimension", false,
            false, {ds, fs4}};
  return r;
}

inline std::optional<Report> fig6(const fs::path& dir) {
  Report r;
  r.csv = "group,p,alpha,alpha_se,d_hat,two_p_over_d\n";
  PlotSeries s{"alpha", {}, {}, false}, theory{"2p/d", {}, {}, true};
  std::vector<std::pair<double, double>> pts;
  for (const auto& g : load_groups(dir)) {
    if (g.value("role", "") != "pnorm" || !has_number(g, "alpha")) continue;
    const double p = g.at("p").get<double>();
    std::string tp;
    if (has_number(g, "d_hat")) {
      tp = format_double(2.0 * p / g.at("d_hat").get<double>());
      theory.x.push_back(p);
      theory.y.push_back(2.0 * p / g.at("d_hat").get<double>());
    }
    r.csv += g.at("group").get<std::string>() + "," + format_double(p) + "," + num(g, "alpha") + "," +
             num(g, "alpha_se") + "," + num(g, "d_hat") + "," + tp + "\n";
    s.x.push_back(p);
    s.y.push_back(g.at("alpha").get<double>());
  }
  if (s.x.empty()) return std::nullopt;
  r.plot = {"Scaling exponent versus loss power p", "p", "alpha", false, false, {s, theory}};
  return r;
}

inline std::optional<Report> fig7(const fs::path& dir) {
  std::vector<AlphaDimensionEntry> entries;
  for (const auto& g : load_groups(dir))
    if (g.value("role", "") == "features" && has_number(g, "alpha") && has_number(g, "d_hat") &&
        g.at("alpha").get<double>() > 0.0)
      entries.push_back({g.at("features").get<double>(), g.at("d_hat").get<double>(), g.at("alpha").get<double>()});
  if (entries.size() < 2) return std::nullopt;
  const auto rep = alpha_vs_dimension_report(entries);
  Report r;
  r.csv = alpha_dimension_csv(rep);
  PlotSeries vd{"vs measured ID", {}, {}, false}, vk{"vs features k", {}, {}, false}, diag{"4/alpha = d", {}, {}, true};
  double lo = 1e300, hi = 0.0;
  for (const auto& e : rep.entries) {
    vd.x.push_back(e.d_hat);
    vd.y.push_back(4.0 / e.alpha);
    vk.x.push_back(e.features);
    vk.y.push_back(4.0 / e.alpha);
    lo = std::min({lo, e.d_hat, e.features});
    hi = std::max({hi, e.d_hat, e.features});
  }
  diag.x = {lo, hi};
  diag.y = {lo, hi};
  r.plot = {"4/alpha versus dimension", "dimension", "4/alpha", false, false, {vd, vk, diag}};
  return r;
}

inline std::optional<Report> fig10(const fs::path& dir) {
  Report r;
  r.csv = "group,features,d_hat,n_max_empirical,log10_n_max\n";
  PlotSeries s{"end of power-law region", {}, {}, false};
  for (const auto& g : load_groups(dir)) {
    if (g.value("role", "") != "features" || !has_number(g, "n_max_empirical")) continue;
    const double nm = g.at("n_max_empirical").get<double>();
    r.csv += g.at("group").get<std::string>() + "," + num(g, "features") + "," + num(g, "d_hat") + "," +
             format_double(nm) + "," + format_double(std::log10(nm)) + "\n";
    if (has_number(g, "d_hat")) {
      s.x.push_back(g.at("d_hat").get<double>());
      s.y.push_back(nm);
    }
  }
  if (s.x.empty()) return std::nullopt;
  r.plot = {"Empirical N_max (end of the selected prefix)", "measured ID", "N_max", false, true, {s}};
  return r;
}

inline std::optional<Report> fig12(const fs::path& dir) {
  const auto files = list_files(dir / "synthetic", ".json");
  if (files.empty()) return std::nullopt;
  Report r;
  r.csv = "manifold,d,method,k,n,d_hat\n";
  r.plot = {"Measured ID versus number of points", "points", "measured ID", true, false, {}};
  for (const auto& path : files) {
    const auto j = read_json(path);
    if (!j) throw ParseError("unreadable record " + path.string());
    const std::string m = j->at("manifold").get<std::string>();
    const std::string d = std::to_string(j->at("d").get<int>());
    auto emit = [&](const std::string& method, int k, double n, double dh, PlotSeries& s) {
      r.csv += m + "," + d + "," + method + "," + std::to_string(k) + "," + format_double(n) + "," + format_double(dh) + "\n";
      s.x.push_back(n);
      s.y.push_back(dh);
    };
    if (!j->at("profiles").empty()) {
      for (const auto& p : j->at("profiles")) {
        PlotSeries s{m + " d=" + d + " " + p.at("method").get<std::string>() + " k=" + std::to_string(p.at("k").get<int>()), {}, {}, true};
        for (const auto& e : p.at("entries"))
          emit(p.at("method").get<std::string>(), p.at("k").get<int>(), e.at("n").get<double>(), e.at("d_hat").get<double>(), s);
        r.plot.series.push_back(s);
      }
    } else {
      for (const auto& e : j->at("estimates")) {
        PlotSeries s{m + " d=" + d + " " + e.at("method").get<std::string>(), {}, {}, false};
        emit(e.at("method").get<std::string>(), e.at("k").get<int>(), j->at("points").get<double>(),
             e.at("d_hat").get<double>(), s);
        r.plot.series.push_back(s);
      }
    }
  }
  return r;
}

inline std::optional<Report> fig13(const fs::path& dir) {
  std::vector<fs::path> files = list_files(dir / "diagnostics", "_per_point.csv");
  for (const auto& p : list_files(dir / "synthetic", "_per_point.csv")) files.push_back(p);
  if (files.empty()) return std::nullopt;
  Report r;
  r.csv = "source,bin_lo,bin_hi,count\n";
  r.plot = {"Per-point MLE dimension histogram", "d (per point)", "count", false, false, {}};
  constexpr int bins = 40;
  for (const auto& path : files) {
    std::vector<double> v;
    for (const auto& row : csv_rows(read_file(path))) {
      if (row.size() < 2) throw ParseError("short row in " + path.string());
      v.push_back(to_num(row[1]));
    }
    if (v.empty()) continue;
    const std::string src = path.stem().string();
    const double lo = *std::min_element(v.begin(), v.end());
    double hi = *std::max_element(v.begin(), v.end());
    if (hi <= lo) hi = lo + 1.0;
    std::vector<long> counts(bins, 0);
    for (double x : v) ++counts[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>((x - lo) / (hi - lo) * bins)))];
    PlotSeries s{src, {}, {}, true};
    for (int b = 0; b < bins; ++b) {
      const double a = lo + (hi - lo) * b / bins, z = lo + (hi - lo) * (b + 1) / bins;
      r.csv += src + "," + format_double(a) + "," + format_double(z) + "," + std::to_string(counts[static_cast<std::size_t>(b)]) + "\n";
      s.x.push_back(0.5 * (a + z));
      s.y.push_back(static_cast<double>(counts[static_cast<std::size_t>(b)]));
    }
    r.plot.series.push_back(s);
  }
  return r;
}

inline std::optional<Report> diagnostics_report(const fs::path& dir, const char* key, const char* xkey,
                                                const std::string& title, const std::string& xlabel, bool logx) {
  Report r;
  r.csv = std::string("group,") + xkey + ",d_hat\n";
  r.plot = {title, xlabel, "measured ID", logx, false, {}};
  for (const auto& path : list_files(dir / "diagnostics", ".json")) {
    const auto j = read_json(path);
    if (!j || !j->contains(key)) continue;
    const ojson& rows = std::string(key) == "profile" ? j->at(key).at("entries") : j->at(key);
    const std::string g = j->at("group").get<std::string>();
    PlotSeries s{g, {}, {}, true};
    for (const auto& e : rows) {
      r.csv += g + "," + format_double(e.at(xkey).get<double>()) + "," + format_double(e.at("d_hat").get<double>()) + "\n";
      s.x.push_back(e.at(xkey).get<double>());
      s.y.push_back(e.at("d_hat").get<double>());
    }
    r.plot.series.push_back(s);
  }
  if (r.plot.series.empty()) return std::nullopt;
  return r;
}

inline std::optional<Report> build(const fs::path& dir, const std::string& fig) {
  if (fig == "fig2") return fig2(dir);
  if (fig == "fig4") return fig4(dir);
  if (fig == "fig5") return fig5(dir);
  if (fig == "fig6") return fig6(dir);
  if (fig == "fig7") return fig7(dir);
  if (fig == "fig10") return fig10(dir);
  if (fig == "fig12") return fig12(dir);
  if (fig == "fig13") return fig13(dir);
  if (fig == "fig14")
    return diagnostics_report(dir, "profile", "n", "Student ID versus number of vectors", "vectors", true);
  if (fig == "fig16")
    return diagnostics_report(dir, "k_scan", "k", "Student ID versus neighbour count", "k", false);
  throw ValidationError("unknown figure '" + fig + "'");
}

inline std::string required_inputs(const std::string& fig) {
  if (fig == "fig2") return "groups/*.json with a threshold N_max (ts_sweep with analysis.loss_threshold)";
  if (fig == "fig4") return "curves/*.csv";
  if (fig == "fig5") return "groups/product.json (product_manifold)";
  if (fig == "fig6") return "groups/*.json with fitted pnorm exponents (pnorm_sweep)";
  if (fig == "fig7") return "at least 2 groups/*.json with fitted exponents and IDs (ts_sweep)";
  if (fig == "fig10") return "groups/*.json with fits (ts_sweep)";
  if (fig == "fig12") return "synthetic/*.json (synthetic_id)";
  if (fig == "fig13") return "per-point MLE CSVs (id.mle_k or an MLE synthetic estimator)";
  if (fig == "fig14") return "diagnostics/*.json with a profile (id.profile_counts)";
  if (fig == "fig16") return "diagnostics/*.json with a neighbour scan (id.k_scan)";
  return "?";
}

}  // namespace detail

/// Figures whose inputs are present in the run directory.
inline std::vector<std::string> applicable_figures(const std::filesystem::path& dir) {
  std::vector<std::string> out;
  for (const auto& f : figure_names())
    if (detail::build(dir, f)) out.push_back(f);
  return out;
}

/// Writes reports/<fig>.csv and reports/<fig>.svg; `fig` may be "all".
/// Returns the figures written.
inline std::vector<std::string> write_report(const std::filesystem::path& dir, const std::string& fig) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError("run directory " + dir.string() + " does not exist");
  std::vector<std::string> targets = fig == "all" ? figure_names() : std::vector<std::string>{fig};
  std::vector<std::string> written, missing;
  for (const auto& f : targets) {
    const auto rep = detail::build(dir, f);
    if (!rep) {
      missing.push_back(f + ": " + detail::required_inputs(f));
      continue;
    }
    write_file(dir / "reports" / (f + ".csv"), rep->csv);
    write_file(dir / "reports" / (f + ".svg"), render_svg(rep->plot));
    written.push_back(f);
  }
  if (written.empty()) {
    std::string msg = "no report inputs found in " + dir.string() + "; missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ValidationError(msg);
  }
  return written;
}

}  // namespace mscale
