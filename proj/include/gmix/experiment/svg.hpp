#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace gmix {

enum class SeriesStyle { line, markers, line_markers };

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> lo;  // optional band, same length as x
  std::vector<double> hi;
  SeriesStyle style = SeriesStyle::line;
};

struct ReferenceLine {
  double y = 0.0;
  std::string label;
};

struct PlotPanel {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<PlotSeries> series;
  std::vector<ReferenceLine> references;
};

struct PlotFigure {
  std::string title;
  std::vector<PlotPanel> panels;
};

namespace detail {

inline std::string svg_num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string tick_label(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
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

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;

  double map(double v, double p0, double p1) const {
    double a = log ? std::log10(lo) : lo, b = log ? std::log10(hi) : hi;
    double u = log ? std::log10(v) : v;
    return p0 + (u - a) / (b - a) * (p1 - p0);
  }

  bool usable(double v) const { return std::isfinite(v) && (!log || v > 0.0); }

  std::vector<double> ticks() const {
    std::vector<double> t;
    if (log) {
      int e0 = static_cast<int>(std::floor(std::log10(lo) + 1e-9));
      int e1 = static_cast<int>(std::ceil(std::log10(hi) - 1e-9));
      for (int e = e0; e <= e1; ++e) {
        double v = std::pow(10.0, e);
        if (v >= lo * (1 - 1e-9) && v <= hi * (1 + 1e-9)) t.push_back(v);
      }
      return t;
    }
    double span = hi - lo;
    double raw = span / 5.0;
    double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
      if (m * mag >= raw) {
        step = m * mag;
        break;
      }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step)
      t.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
    return t;
  }
};

inline Axis make_axis(const std::vector<double>& values, bool log) {
  Axis ax;
  ax.log = log;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values)
    if (std::isfinite(v) && (!log || v > 0.0)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) {
    ax.lo = log ? 1.0 : 0.0;
    ax.hi = log ? 10.0 : 1.0;
    return ax;
  }
  if (log) {
    if (hi <= lo) { lo /= 10.0; hi *= 10.0; }
    ax.lo = std::pow(10.0, std::floor(std::log10(lo)));
    ax.hi = std::pow(10.0, std::ceil(std::log10(hi)));
  } else {
    if (hi <= lo) {
      double pad = lo == 0.0 ? 1.0 : 0.1 * std::abs(lo);
      lo -= pad;
      hi += pad;
    }
    double pad = 0.05 * (hi - lo);
    ax.lo = lo - pad;
    ax.hi = hi + pad;
  }
  return ax;
}

}  // namespace detail

// Deterministic static SVG: identical input gives identical bytes.
inline std::string render_svg(const PlotFigure& fig) {
  using detail::svg_num;
  const double pw = 440, ph = 330, ml = 62, mr = 16, mt = 30, mb = 48, title_h = fig.title.empty() ? 0 : 28;
  const std::size_t n = std::max<std::size_t>(1, fig.panels.size());
  const double W = pw * static_cast<double>(n), H = ph + title_h;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_num(W) << "\" height=\"" << svg_num(H)
     << "\" viewBox=\"0 0 " << svg_num(W) << ' ' << svg_num(H) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!fig.title.empty())
    os << "<text x=\"" << svg_num(W / 2) << "\" y=\"19\" text-anchor=\"middle\" font-size=\"14\">"
       << detail::xml_escape(fig.title) << "</text>\n";

  for (std::size_t pi = 0; pi < fig.panels.size(); ++pi) {
    const PlotPanel& p = fig.panels[pi];
    const double ox = pw * static_cast<double>(pi), oy = title_h;
    const double x0 = ox + ml, x1 = ox + pw - mr, y0 = oy + ph - mb, y1 = oy + mt;

    std::vector<double> xs, ys;
    bool any = false;
    for (const auto& s : p.series) {
      xs.insert(xs.end(), s.x.begin(), s.x.end());
      ys.insert(ys.end(), s.y.begin(), s.y.end());
      ys.insert(ys.end(), s.lo.begin(), s.lo.end());
      ys.insert(ys.end(), s.hi.begin(), s.hi.end());
      any = any || !s.x.empty();
    }
    for (const auto& r : p.references) ys.push_back(r.y);
    detail::Axis ax = detail::make_axis(xs, p.log_x);
    detail::Axis ay = detail::make_axis(ys, p.log_y);

    os << "<g>\n";
    if (!p.title.empty())
      os << "<text x=\"" << svg_num((x0 + x1) / 2) << "\" y=\"" << svg_num(oy + 18)
         << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::xml_escape(p.title) << "</text>\n";
    os << "<rect x=\"" << svg_num(x0) << "\" y=\"" << svg_num(y1) << "\" width=\"" << svg_num(x1 - x0)
       << "\" height=\"" << svg_num(y0 - y1) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t : ax.ticks()) {
      double X = ax.map(t, x0, x1);
      os << "<line x1=\"" << svg_num(X) << "\" y1=\"" << svg_num(y0) << "\" x2=\"" << svg_num(X) << "\" y2=\""
         << svg_num(y0 + 4) << "\" stroke=\"black\"/>\n";
      os << "<text x=\"" << svg_num(X) << "\" y=\"" << svg_num(y0 + 16) << "\" text-anchor=\"middle\">"
         << detail::tick_label(t) << "</text>\n";
    }
    for (double t : ay.ticks()) {
      double Y = ay.map(t, y0, y1);
      os << "<line x1=\"" << svg_num(x0 - 4) << "\" y1=\"" << svg_num(Y) << "\" x2=\"" << svg_num(x0) << "\" y2=\""
         << svg_num(Y) << "\" stroke=\"black\"/>\n";
      os << "<text x=\"" << svg_num(x0 - 6) << "\" y=\"" << svg_num(Y + 4) << "\" text-anchor=\"end\">"
         << detail::tick_label(t) << "</text>\n";
    }
    os << "<text x=\"" << svg_num((x0 + x1) / 2) << "\" y=\"" << svg_num(y0 + 36) << "\" text-anchor=\"middle\">"
       << detail::xml_escape(p.x_label) << "</text>\n";
    os << "<text transform=\"translate(" << svg_num(ox + 16) << ',' << svg_num((y0 + y1) / 2)
       << ") rotate(-90)\" text-anchor=\"middle\">" << detail::xml_escape(p.y_label) << "</text>\n";

    if (!any) {
      os << "<text x=\"" << svg_num((x0 + x1) / 2) << "\" y=\"" << svg_num((y0 + y1) / 2)
         << "\" text-anchor=\"middle\" fill=\"#b00\">warning: no data</text>\n";
    }

    for (const auto& r : p.references) {
      if (!ay.usable(r.y)) continue;
      double Y = ay.map(r.y, y0, y1);
      os << "<line x1=\"" << svg_num(x0) << "\" y1=\"" << svg_num(Y) << "\" x2=\"" << svg_num(x1) << "\" y2=\""
         << svg_num(Y) << "\" stroke=\"black\" stroke-dasharray=\"5,4\"/>\n";
      if (!r.label.empty())
        os << "<text x=\"" << svg_num(x1 - 4) << "\" y=\"" << svg_num(Y - 4) << "\" text-anchor=\"end\">"
           << detail::xml_escape(r.label) << "</text>\n";
    }

    for (std::size_t si = 0; si < p.series.size(); ++si) {
      const PlotSeries& s = p.series[si];
      const char* col = detail::palette(si);
      auto ok = [&](std::size_t i) { return ax.usable(s.x[i]) && ay.usable(s.y[i]); };
      if (!s.lo.empty() && s.lo.size() == s.x.size() && s.hi.size() == s.x.size()) {
        std::string upper, lower;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!ax.usable(s.x[i]) || !ay.usable(s.lo[i]) || !ay.usable(s.hi[i])) continue;
          upper += svg_num(ax.map(s.x[i], x0, x1)) + ',' + svg_num(ay.map(s.hi[i], y0, y1)) + ' ';
          lower = svg_num(ax.map(s.x[i], x0, x1)) + ',' + svg_num(ay.map(s.lo[i], y0, y1)) + ' ' + lower;
        }
        if (!upper.empty())
          os << "<polygon points=\"" << upper << lower << "\" fill=\"" << col << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
      }
      if (s.style != SeriesStyle::markers) {
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!ok(i)) continue;
          pts += svg_num(ax.map(s.x[i], x0, x1)) + ',' + svg_num(ay.map(s.y[i], y0, y1)) + ' ';
        }
        if (!pts.empty())
          os << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\"/>\n";
      }
      if (s.style != SeriesStyle::line) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!ok(i)) continue;
          double X = ax.map(s.x[i], x0, x1), Y = ay.map(s.y[i], y0, y1);
          os << "<path d=\"M" << svg_num(X - 3) << ',' << svg_num(Y - 3) << " L" << svg_num(X + 3) << ','
             << svg_num(Y + 3) << " M" << svg_num(X - 3) << ',' << svg_num(Y + 3) << " L" << svg_num(X + 3) << ','
             << svg_num(Y - 3) << "\" stroke=\"" << col << "\"/>\n";
        }
      }
      double ly = y1 + 14 + 14 * static_cast<double>(si);
      os << "<line x1=\"" << svg_num(x1 - 120) << "\" y1=\"" << svg_num(ly - 4) << "\" x2=\"" << svg_num(x1 - 104)
         << "\" y2=\"" << svg_num(ly - 4) << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
      os << "<text x=\"" << svg_num(x1 - 100) << "\" y=\"" << svg_num(ly) << "\">" << detail::xml_escape(s.name)
         << "</text>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace gmix
