#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dsal/core_types.hpp"
#include "dsal/datagen.hpp"
#include "dsal/error.hpp"
#include "dsal/orchestrator.hpp"

namespace dsal::report {

inline std::string num(double v, int prec = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
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

/// One plotted line: mean over runs at each labeled fraction.
struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct CurveResult {
  std::vector<Series> series;
  std::vector<std::string> warnings;
};

/// Groups rows into one series per (arch, strategy); the arch prefix is only
/// added when several architectures are present. Rounds missing from some
/// runs of a series are dropped from it (with a warning).
inline CurveResult build_series(std::span<const MetricsRow> rows, const std::string& metric) {
  using Key = std::pair<std::string, std::string>;
  std::map<Key, std::map<std::uint64_t, std::map<std::size_t, std::pair<double, double>>>> runs;
  std::set<std::string> archs;
  for (const auto& r : rows) {
    archs.insert(r.arch);
    const auto v = r.get(metric);
    if (!v) continue;
    runs[{r.arch, r.strategy}][r.seed][r.labeled_count] = {r.labeled_frac, *v};
  }
  CurveResult out;
  for (const auto& [key, by_seed] : runs) {
    std::set<std::size_t> common;
    bool first = true;
    for (const auto& [seed, pts] : by_seed) {
      std::set<std::size_t> counts;
      for (const auto& [c, p] : pts) counts.insert(c);
      if (first) {
        common = counts;
        first = false;
      } else {
        std::set<std::size_t> keep;
        std::set_intersection(common.begin(), common.end(), counts.begin(), counts.end(), std::inserter(keep, keep.end()));
        common = keep;
      }
    }
    for (const auto& [seed, pts] : by_seed) {
      if (pts.size() != common.size()) {
        out.warnings.push_back(key.first + "/" + key.second + ": seed " + std::to_string(seed) +
                               " has rounds missing from other runs; plotting the common rounds only");
      }
    }
    Series s;
    s.label = archs.size() > 1 ? key.first + " " + key.second : key.second;
    for (std::size_t c : common) {
      double sum = 0.0, frac = 0.0;
      for (const auto& [seed, pts] : by_seed) {
        sum += pts.at(c).second;
        frac = pts.at(c).first;
      }
      s.x.push_back(frac);
      s.y.push_back(sum / static_cast<double>(by_seed.size()));
    }
    if (!s.x.empty()) out.series.push_back(std::move(s));
  }
  return out;
}

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return palette[i % 8];
}

/// Line chart of `metric` against labeled fraction; log-scaled y by default.
inline std::string learning_curve_svg(const CurveResult& cr, const std::string& metric, bool log_y = true,
                                      const std::string& title = "") {
  const double W = 640, H = 420, L = 80, R = 170, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : cr.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      if (log_y && !(s.y[i] > 0.0)) continue;
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = log_y ? 0.1 : 0.0;
    ymax = 1.0;
  }
  if (xmax == xmin) {
    xmin -= 0.05;
    xmax += 0.05;
  }
  double y0, y1;
  if (log_y) {
    y0 = std::floor(std::log10(ymin));
    y1 = std::ceil(std::log10(ymax));
    if (y1 == y0) y1 = y0 + 1;
  } else {
    y0 = 0.0;
    y1 = ymax * 1.1;
    if (y1 == y0) y1 = 1.0;
  }
  auto X = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) {
    const double t = log_y ? (std::log10(y) - y0) / (y1 - y0) : (y - y0) / (y1 - y0);
    return T + (1.0 - t) * ph;
  };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(W) + "\" height=\"" + px(H) +
                  "\" viewBox=\"0 0 " + px(W) + " " + px(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<metadata>metric=" + xml_escape(metric) + "; y_scale=" + (log_y ? "log" : "linear") + "</metadata>\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + px(W) + "\" height=\"" + px(H) + "\" fill=\"white\"/>\n";
  s += "<rect x=\"" + px(L) + "\" y=\"" + px(T) + "\" width=\"" + px(pw) + "\" height=\"" + px(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  if (!title.empty()) s += "<text x=\"" + px(L + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) + "</text>\n";

  // y ticks
  if (log_y) {
    for (double e = y0; e <= y1 + 1e-9; e += 1.0) {
      for (int m = 1; m <= 9; ++m) {
        const double v = static_cast<double>(m) * std::pow(10.0, e);
        if (std::log10(v) > y1 + 1e-9) break;
        const double yy = Y(v);
        const bool major = m == 1;
        s += "<line x1=\"" + px(L) + "\" y1=\"" + px(yy) + "\" x2=\"" + px(L + pw) + "\" y2=\"" + px(yy) + "\" stroke=\"" +
             (major ? "#bbbbbb" : "#eeeeee") + "\"/>\n";
        if (major || m == 2 || m == 5) {
          s += "<text x=\"" + px(L - 6) + "\" y=\"" + px(yy + 4) + "\" text-anchor=\"end\">" + num(v, 3) + "</text>\n";
        }
      }
    }
  } else {
    for (int i = 0; i <= 5; ++i) {
      const double v = y0 + (y1 - y0) * i / 5.0;
      const double yy = Y(v);
      s += "<line x1=\"" + px(L) + "\" y1=\"" + px(yy) + "\" x2=\"" + px(L + pw) + "\" y2=\"" + px(yy) + "\" stroke=\"#dddddd\"/>\n";
      s += "<text x=\"" + px(L - 6) + "\" y=\"" + px(yy + 4) + "\" text-anchor=\"end\">" + num(v, 3) + "</text>\n";
    }
  }
  // x ticks
  for (int i = 0; i <= 5; ++i) {
    const double v = xmin + (xmax - xmin) * i / 5.0;
    const double xx = X(v);
    s += "<line x1=\"" + px(xx) + "\" y1=\"" + px(T + ph) + "\" x2=\"" + px(xx) + "\" y2=\"" + px(T + ph + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + px(xx) + "\" y=\"" + px(T + ph + 20) + "\" text-anchor=\"middle\">" + num(100.0 * v, 3) + "%</text>\n";
  }
  s += "<text x=\"" + px(L + pw / 2) + "\" y=\"" + px(H - 16) + "\" text-anchor=\"middle\">labeled fraction</text>\n";
  s += "<text transform=\"translate(18 " + px(T + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">test " + xml_escape(metric) +
       (log_y ? " (log)" : "") + "</text>\n";

  for (std::size_t k = 0; k < cr.series.size(); ++k) {
    const auto& ser = cr.series[k];
    const char* col = series_color(k);
    const std::string dash = k % 2 ? " stroke-dasharray=\"6 3\"" : "";
    std::string pts;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (log_y && !(ser.y[i] > 0.0)) continue;
      pts += px(X(ser.x[i])) + "," + px(Y(ser.y[i])) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" stroke-width=\"2\"" + dash + " points=\"" + pts + "\"/>\n";
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (log_y && !(ser.y[i] > 0.0)) continue;
      s += "<circle cx=\"" + px(X(ser.x[i])) + "\" cy=\"" + px(Y(ser.y[i])) + "\" r=\"3\" fill=\"" + col + "\"/>\n";
    }
    const double ly = T + 14 + 20.0 * static_cast<double>(k);
    s += "<line x1=\"" + px(L + pw + 12) + "\" y1=\"" + px(ly) + "\" x2=\"" + px(L + pw + 40) + "\" y2=\"" + px(ly) + "\" stroke=\"" + col +
         "\" stroke-width=\"2\"" + dash + "/>\n";
    s += "<text x=\"" + px(L + pw + 46) + "\" y=\"" + px(ly + 4) + "\">" + xml_escape(ser.label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

// ---- field images -----------------------------------------------------------

/// Piecewise-linear approximation of a perceptually ordered colormap.
inline std::string colormap(double t) {
  static const double stops[][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

struct Panel {
  std::string title;
  const FieldGrid* grid = nullptr;
  double vmin = 0.0, vmax = 1.0;
};

/// Side-by-side heat maps with a shared cell size and one colorbar each.
inline std::string panels_svg(std::span<const Panel> panels, const std::string& metadata, double cell = 6.0) {
  if (panels.empty()) throw ConfigError("panels_svg: nothing to draw");
  const int gh = panels.front().grid->height, gw = panels.front().grid->width;
  const double pw = gw * cell, ph = gh * cell, gap = 40, top = 30, bar = 14;
  const double W = static_cast<double>(panels.size()) * (pw + gap) + gap, H = top + ph + bar + 40;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(W) + "\" height=\"" + px(H) + "\" viewBox=\"0 0 " +
                  px(W) + " " + px(H) + "\" font-family=\"sans-serif\" font-size=\"11\" shape-rendering=\"crispEdges\">\n";
  s += "<metadata>" + xml_escape(metadata) + "</metadata>\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + px(W) + "\" height=\"" + px(H) + "\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const auto& p = panels[k];
    if (p.grid->height != gh || p.grid->width != gw) throw ShapeError("panels_svg: panels differ in size");
    const double x0 = gap + static_cast<double>(k) * (pw + gap);
    s += "<text x=\"" + px(x0 + pw / 2) + "\" y=\"20\" text-anchor=\"middle\">" + xml_escape(p.title) + "</text>\n";
    const double span = p.vmax > p.vmin ? p.vmax - p.vmin : 1.0;
    for (int i = 0; i < gh; ++i) {
      for (int j = 0; j < gw; ++j) {
        const double v = p.grid->at(i, j);
        s += "<rect x=\"" + px(x0 + j * cell) + "\" y=\"" + px(top + i * cell) + "\" width=\"" + px(cell) + "\" height=\"" + px(cell) +
             "\" fill=\"" + colormap((v - p.vmin) / span) + "\"/>\n";
      }
    }
    const double by = top + ph + 8;
    for (int b = 0; b < 32; ++b) {
      s += "<rect x=\"" + px(x0 + b * pw / 32.0) + "\" y=\"" + px(by) + "\" width=\"" + px(pw / 32.0 + 0.5) + "\" height=\"" + px(bar) +
           "\" fill=\"" + colormap((b + 0.5) / 32.0) + "\"/>\n";
    }
    s += "<text x=\"" + px(x0) + "\" y=\"" + px(by + bar + 13) + "\">" + num(p.vmin, 3) + "</text>\n";
    s += "<text x=\"" + px(x0 + pw) + "\" y=\"" + px(by + bar + 13) + "\" text-anchor=\"end\">" + num(p.vmax, 3) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

/// Fixed error color ranges per architecture, so maps of one architecture
/// are comparable across samples and rounds.
inline double default_error_range(Arch a) { return a == Arch::unet ? 0.1 : 0.3; }

inline FieldGrid abs_error(const FieldGrid& pred, const FieldGrid& target) {
  require_same_shape(pred, target, "abs_error");
  FieldGrid e(pred.height, pred.width);
  for (std::size_t i = 0; i < e.size(); ++i) e.values[i] = std::abs(pred.values[i] - target.values[i]);
  return e;
}

/// Input, target, prediction and |prediction - target| for one sample.
inline std::string error_map_svg(const FieldGrid& input, const FieldGrid& target, const FieldGrid& pred, Arch arch,
                                 double error_range, const std::string& label) {
  const auto err = abs_error(pred, target);
  const Panel panels[] = {{"input", &input, 0.0, 1.0},
                          {"target", &target, 0.0, 1.0},
                          {"prediction", &pred, 0.0, 1.0},
                          {"|error| (" + std::string(to_string(arch)) + ")", &err, 0.0, error_range}};
  return panels_svg(panels, label + "; arch=" + to_string(arch) + "; error_range=[0," + num(error_range, 6) + "]");
}

// ---- parameter distribution -------------------------------------------------

struct Histogram {
  std::string variable;
  double lo = 0.0, hi = 1.0;
  std::vector<std::size_t> counts;
};

inline Histogram histogram(const std::string& name, std::span<const double> v, double lo, double hi, int bins) {
  Histogram h{name, lo, hi, std::vector<std::size_t>(static_cast<std::size_t>(bins), 0)};
  for (double x : v) {
    int b = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

/// Histograms of the scenario parameters: source separation d, second
/// intensity q2, and source center coordinates.
inline std::vector<Histogram> parameter_histograms(const Dataset& ds, int bins = 10) {
  std::vector<double> d, q2, cx, cy;
  for (const auto& e : ds.entries) {
    d.push_back(e.params.d());
    q2.push_back(e.params.q2);
    cx.push_back(e.params.cx1);
    cx.push_back(e.params.cx2);
    cy.push_back(e.params.cy1);
    cy.push_back(e.params.cy2);
  }
  const double r = ds.entries.empty() ? 5.0 : ds.entries.front().params.r;
  const double clo = r, chi = ds.size - 1 - r;
  const double dmax = std::hypot(chi - clo, chi - clo);
  return {histogram("d", d, 0.0, dmax, bins), histogram("q2", q2, 0.0, 1.0, bins), histogram("cx", cx, clo, chi, bins),
          histogram("cy", cy, clo, chi, bins)};
}

inline std::string histograms_csv(std::span<const Histogram> hs) {
  std::string out = "variable,bin_lo,bin_hi,count\n";
  for (const auto& h : hs) {
    const double w = (h.hi - h.lo) / static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      out += h.variable + ',' + io::fmt_double(h.lo + w * b) + ',' + io::fmt_double(h.lo + w * (b + 1)) + ',' + std::to_string(h.counts[b]) + '\n';
  }
  return out;
}

inline std::string histograms_text(std::span<const Histogram> hs, int width = 40) {
  std::string out;
  for (const auto& h : hs) {
    out += h.variable + ":\n";
    const std::size_t peak = std::max<std::size_t>(1, *std::max_element(h.counts.begin(), h.counts.end()));
    const double w = (h.hi - h.lo) / static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "  [%7.3f, %7.3f) %6zu ", h.lo + w * b, h.lo + w * (b + 1), h.counts[b]);
      out += buf;
      out += std::string(h.counts[b] * static_cast<std::size_t>(width) / peak, '#');
      out += '\n';
    }
  }
  return out;
}

}  // namespace dsal::report
