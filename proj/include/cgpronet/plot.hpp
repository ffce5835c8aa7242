#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "cgpronet/error.hpp"
#include "cgpronet/io.hpp"

namespace cgp::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// For heatmaps each series is one row: x holds column positions, y the cell values.
struct Table {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

enum class Kind { line, heatmap };

struct Output {
  /// gnuplot-readable blocks, one per series, separated by two blank lines.
  std::string columns;
  std::string svg;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* color(std::size_t k) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[k % 8];
}

/// Blue-to-yellow ramp for t in [0, 1].
inline std::string ramp(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(68 + t * (253 - 68)));
  const int g = static_cast<int>(std::lround(1 + t * (231 - 1)));
  const int b = static_cast<int>(std::lround(84 + t * (37 - 84)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = hi = 0.0;
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

inline constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;

inline std::string header(const Table& t) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" + escape(t.title) + "</text>\n";
  s += "<text x=\"" + num((kLeft + kWidth - kRight) / 2) + "\" y=\"390\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
       escape(t.x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((kTop + kHeight - kBottom) / 2) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
       num((kTop + kHeight - kBottom) / 2) + ")\">" + escape(t.y_label) + "</text>\n";
  return s;
}

inline std::string line_svg(const Table& t) {
  Range xr, yr;
  for (const auto& s : t.series)
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      xr.add(s.x[k]);
      yr.add(s.y[k]);
    }
  xr.finish();
  yr.finish();
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string svg = header(t);
  svg += "<rect x=\"" + num(x0) + "\" y=\"" + num(y1) + "\" width=\"" + num(x1 - x0) + "\" height=\"" + num(y0 - y1) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    const double yv = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    const double px = xr.map(xv, x0, x1), py = yr.map(yv, y0, y1);
    svg += "<text x=\"" + num(px) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + num(xv) + "</text>\n";
    svg += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(py + 3) + "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + num(yv) + "</text>\n";
  }
  for (std::size_t k = 0; k < t.series.size(); ++k) {
    const auto& s = t.series[k];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += num(xr.map(s.x[i], x0, x1)) + "," + num(yr.map(s.y[i], y0, y1));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color(k)) + "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    const double ly = y1 + 14 + 16 * static_cast<double>(k);
    svg += "<line x1=\"" + num(x1 + 10) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(x1 + 30) + "\" y2=\"" + num(ly) +
           "\" stroke=\"" + color(k) + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(x1 + 35) + "\" y=\"" + num(ly + 4) + "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(s.name) + "</text>\n";
  }
  return svg + "</svg>\n";
}

inline std::string heatmap_svg(const Table& t) {
  Range vr;
  std::vector<double> xs;
  for (const auto& s : t.series)
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      vr.add(s.y[k]);
      if (std::find(xs.begin(), xs.end(), s.x[k]) == xs.end()) xs.push_back(s.x[k]);
    }
  vr.finish();
  std::sort(xs.begin(), xs.end());
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const double cw = (x1 - x0) / static_cast<double>(std::max<std::size_t>(1, xs.size()));
  const double ch = (y0 - y1) / static_cast<double>(std::max<std::size_t>(1, t.series.size()));
  std::string svg = header(t);
  for (std::size_t r = 0; r < t.series.size(); ++r) {
    const auto& s = t.series[r];
    const double ry = y1 + ch * static_cast<double>(r);
    svg += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(ry + ch / 2 + 4) + "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + escape(s.name) + "</text>\n";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      const auto col = static_cast<double>(std::find(xs.begin(), xs.end(), s.x[k]) - xs.begin());
      const double rx = x0 + cw * col;
      svg += "<rect x=\"" + num(rx) + "\" y=\"" + num(ry) + "\" width=\"" + num(cw) + "\" height=\"" + num(ch) +
             "\" fill=\"" + ramp(vr.map(s.y[k], 0.0, 1.0)) + "\" stroke=\"white\"/>\n";
      svg += "<text x=\"" + num(rx + cw / 2) + "\" y=\"" + num(ry + ch / 2 + 4) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + num(s.y[k]) + "</text>\n";
    }
  }
  for (std::size_t k = 0; k < xs.size(); ++k)
    svg += "<text x=\"" + num(x0 + cw * (static_cast<double>(k) + 0.5)) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + num(xs[k]) + "</text>\n";
  svg += "<text x=\"" + num(x1 + 10) + "\" y=\"" + num(y1 + 12) + "\" font-family=\"sans-serif\" font-size=\"10\">min " + num(vr.lo) + "</text>\n";
  svg += "<text x=\"" + num(x1 + 10) + "\" y=\"" + num(y1 + 26) + "\" font-family=\"sans-serif\" font-size=\"10\">max " + num(vr.hi) + "</text>\n";
  return svg + "</svg>\n";
}

}  // namespace detail

/// Deterministic text and SVG renderings of a table.
inline Output emit_plotdata(const Table& t, Kind kind) {
  bool any = false;
  for (const auto& s : t.series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("emit_plotdata: series '" + s.name + "' has mismatched x/y lengths");
    any = any || !s.x.empty();
  }
  if (!any) throw InvalidArgument("emit_plotdata: empty table");
  Output out;
  out.columns = "# " + t.title + "\n# " + t.x_label + " " + t.y_label + "\n";
  for (std::size_t k = 0; k < t.series.size(); ++k) {
    if (k > 0) out.columns += "\n\n";
    out.columns += "# " + t.series[k].name + "\n";
    for (std::size_t i = 0; i < t.series[k].x.size(); ++i)
      out.columns += io::format_double(t.series[k].x[i]) + " " + io::format_double(t.series[k].y[i]) + "\n";
  }
  out.svg = kind == Kind::line ? detail::line_svg(t) : detail::heatmap_svg(t);
  return out;
}

}  // namespace cgp::plot
