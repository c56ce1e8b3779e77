#pragma once

// Minimal static SVG charts: scatter and line series on linear or log axes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "mscale/errors.hpp"

namespace mscale {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool line = false;     // polyline instead of markers
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<PlotSeries> series;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& spec) {
  constexpr double W = 640, H = 440, L = 70, R = 160, T = 40, B = 60;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0) && (!spec.log_y || y > 0);
  };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : spec.series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!std::isfinite(x0)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double padx = 0.05 * (x1 - x0), pady = 0.05 * (y1 - y0);
  x0 -= padx;
  x1 += padx;
  y0 -= pady;
  y1 += pady;
  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<rect width=\"640\" height=\"440\" fill=\"white\"/>\n";
  out += "<text x=\"" + detail::fmt(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         detail::escape_xml(spec.title) + "</text>\n";
  out += "<rect x=\"" + detail::fmt(L) + "\" y=\"" + detail::fmt(T) + "\" width=\"" + detail::fmt(W - L - R) +
         "\" height=\"" + detail::fmt(H - T - B) + "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    const double vx = spec.log_x ? std::pow(10.0, fx) : fx, vy = spec.log_y ? std::pow(10.0, fy) : fy;
    const double sx = L + (W - L - R) * i / 4.0, sy = H - B - (H - T - B) * i / 4.0;
    out += "<text x=\"" + detail::fmt(sx) + "\" y=\"" + detail::fmt(H - B + 16) + "\" text-anchor=\"middle\">" +
           detail::tick_label(vx) + "</text>\n";
    out += "<text x=\"" + detail::fmt(L - 6) + "\" y=\"" + detail::fmt(sy + 4) + "\" text-anchor=\"end\">" +
           detail::tick_label(vy) + "</text>\n";
  }
  out += "<text x=\"" + detail::fmt(L + (W - L - R) / 2) + "\" y=\"" + detail::fmt(H - 18) +
         "\" text-anchor=\"middle\">" + detail::escape_xml(spec.x_label) + "</text>\n";
  out += "<text transform=\"translate(16," + detail::fmt(T + (H - T - B) / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape_xml(spec.y_label) + "</text>\n";

  for (std::size_t s = 0; s < spec.series.size(); ++s) {
    const auto& ser = spec.series[s];
    const std::string color = colors[s % (sizeof colors / sizeof *colors)];
    if (ser.line) {
      std::string pts;
      for (std::size_t i = 0; i < std::min(ser.x.size(), ser.y.size()); ++i)
        if (usable(ser.x[i], ser.y[i])) pts += detail::fmt(px(ser.x[i])) + "," + detail::fmt(py(ser.y[i])) + " ";
      out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    } else {
      for (std::size_t i = 0; i < std::min(ser.x.size(), ser.y.size()); ++i)
        if (usable(ser.x[i], ser.y[i]))
          out += "<circle cx=\"" + detail::fmt(px(ser.x[i])) + "\" cy=\"" + detail::fmt(py(ser.y[i])) +
                 "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    const double ly = T + 14 + 16.0 * static_cast<double>(s);
    out += "<rect x=\"" + detail::fmt(W - R + 12) + "\" y=\"" + detail::fmt(ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
           color + "\"/>\n";
    out += "<text x=\"" + detail::fmt(W - R + 28) + "\" y=\"" + detail::fmt(ly + 1) + "\">" + detail::escape_xml(ser.name) +
           "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace mscale
