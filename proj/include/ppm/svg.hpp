#pragma once

/**
 * Static SVG figures for run artifacts. Pure string assembly over data
 * coordinates; callers adapt their structures to plain vectors.
 */

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ppm {

using SvgPoint = std::pair<double, double>;

/// Fixed-viewport plot with margins and a linear data-to-pixel map.
/// The y axis points up in data space.
class SvgPlot {
 public:
  SvgPlot(double width, double height, double x_min, double x_max,
          double y_min, double y_max, double margin = 46.0)
      : w_(width), h_(height), m_(margin), x0_(x_min), x1_(x_max), y0_(y_min),
        y1_(y_max) {
    if (!(width > 2 * margin) || !(height > 2 * margin) || !(x_max > x_min) ||
        !(y_max > y_min) || !std::isfinite(x_min + x_max + y_min + y_max)) {
      throw std::invalid_argument("svg: degenerate plot bounds");
    }
  }

  double px(double x) const {
    return m_ + (x - x0_) / (x1_ - x0_) * (w_ - 2 * m_);
  }
  double py(double y) const {
    return h_ - m_ - (y - y0_) / (y1_ - y0_) * (h_ - 2 * m_);
  }

  void polyline(const std::vector<SvgPoint>& pts, const std::string& color,
                double stroke = 1.5, const std::string& dash = "") {
    if (pts.size() < 2) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"" << stroke << "\"";
    if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
    body_ << " points=\"";
    for (const SvgPoint& p : pts) {
      body_ << fmt(px(p.first)) << ',' << fmt(py(p.second)) << ' ';
    }
    body_ << "\"/>\n";
  }

  void polygon(const std::vector<SvgPoint>& pts, const std::string& fill,
               double opacity) {
    if (pts.size() < 3) return;
    body_ << "<polygon fill=\"" << fill << "\" fill-opacity=\"" << opacity
          << "\" stroke=\"none\" points=\"";
    for (const SvgPoint& p : pts) {
      body_ << fmt(px(p.first)) << ',' << fmt(py(p.second)) << ' ';
    }
    body_ << "\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& color) {
    body_ << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y))
          << "\" r=\"" << r << "\" fill=\"" << color << "\"/>\n";
  }

  /// Text anchored at a data coordinate; dy shifts in pixels (down > 0).
  void text(double x, double y, const std::string& s,
            const std::string& anchor = "middle", double dy = 0.0,
            double size = 11.0) {
    body_ << "<text x=\"" << fmt(px(x)) << "\" y=\"" << fmt(py(y) + dy)
          << "\" font-family=\"sans-serif\" font-size=\"" << size
          << "\" text-anchor=\"" << anchor << "\">" << escape(s)
          << "</text>\n";
  }

  void axes(const std::vector<std::pair<double, std::string>>& x_ticks,
            const std::vector<std::pair<double, std::string>>& y_ticks,
            const std::string& x_label, const std::string& y_label,
            const std::string& title) {
    body_ << "<rect x=\"" << m_ << "\" y=\"" << m_ << "\" width=\""
          << w_ - 2 * m_ << "\" height=\"" << h_ - 2 * m_
          << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    for (const auto& [x, label] : x_ticks) {
      const double p = px(x);
      body_ << "<line x1=\"" << fmt(p) << "\" y1=\"" << h_ - m_ << "\" x2=\""
            << fmt(p) << "\" y2=\"" << h_ - m_ + 4 << "\" stroke=\"#444\"/>\n";
      body_ << "<text x=\"" << fmt(p) << "\" y=\"" << h_ - m_ + 16
            << "\" font-family=\"sans-serif\" font-size=\"10\" "
               "text-anchor=\"middle\">"
            << escape(label) << "</text>\n";
    }
    for (const auto& [y, label] : y_ticks) {
      const double p = py(y);
      body_ << "<line x1=\"" << m_ - 4 << "\" y1=\"" << fmt(p) << "\" x2=\""
            << m_ << "\" y2=\"" << fmt(p) << "\" stroke=\"#444\"/>\n";
      body_ << "<text x=\"" << m_ - 7 << "\" y=\"" << fmt(p + 3)
            << "\" font-family=\"sans-serif\" font-size=\"10\" "
               "text-anchor=\"end\">"
            << escape(label) << "</text>\n";
    }
    body_ << "<text x=\"" << w_ / 2 << "\" y=\"" << h_ - 8
          << "\" font-family=\"sans-serif\" font-size=\"12\" "
             "text-anchor=\"middle\">"
          << escape(x_label) << "</text>\n";
    body_ << "<text x=\"14\" y=\"" << h_ / 2
          << "\" font-family=\"sans-serif\" font-size=\"12\" "
             "text-anchor=\"middle\" transform=\"rotate(-90 14 "
          << h_ / 2 << ")\">" << escape(y_label) << "</text>\n";
    body_ << "<text x=\"" << w_ / 2 << "\" y=\"" << m_ - 12
          << "\" font-family=\"sans-serif\" font-size=\"13\" "
             "text-anchor=\"middle\">"
          << escape(title) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_
        << "\" height=\"" << h_ << "\" viewBox=\"0 0 " << w_ << ' ' << h_
        << "\">\n<rect width=\"" << w_ << "\" height=\"" << h_
        << "\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }

  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '&') out += "&amp;";
      else if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else out += c;
    }
    return out;
  }

  double w_, h_, m_;
  double x0_, x1_, y0_, y1_;
  std::ostringstream body_;
};

/// Log-log scatter of (knob, stat) cells with the fitted power law drawn
/// through them.
inline std::string render_loglog_figure(
    const std::vector<SvgPoint>& cells, double slope, double intercept,
    const std::string& title, const std::string& x_label,
    const std::string& y_label) {
  if (cells.size() < 2) throw std::invalid_argument("figure: need >= 2 cells");
  double lx0 = 1e300, lx1 = -1e300, ly0 = 1e300, ly1 = -1e300;
  std::vector<SvgPoint> logs;
  for (const SvgPoint& c : cells) {
    if (!(c.first > 0.0) || !(c.second > 0.0)) {
      throw std::invalid_argument("figure: log-log needs positive cells");
    }
    const double lx = std::log10(c.first), ly = std::log10(c.second);
    logs.push_back({lx, ly});
    lx0 = std::min(lx0, lx);
    lx1 = std::max(lx1, lx);
    ly0 = std::min(ly0, ly);
    ly1 = std::max(ly1, ly);
  }
  const double padx = 0.08 * (lx1 - lx0 + 1e-9), pady = 0.15 * (ly1 - ly0 + 1e-9);
  SvgPlot plot(520, 360, lx0 - padx, lx1 + padx, ly0 - pady, ly1 + pady);
  std::vector<std::pair<double, std::string>> xt, yt;
  for (const SvgPoint& p : logs) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", std::pow(10.0, p.first));
    xt.push_back({p.first, buf});
  }
  for (double ly = std::ceil(ly0); ly <= std::floor(ly1) + 1e-9; ly += 1.0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "1e%d", static_cast<int>(ly));
    yt.push_back({ly, buf});
  }
  char sub[64];
  std::snprintf(sub, sizeof sub, "fitted slope %.3f", slope);
  plot.axes(xt, yt, x_label, y_label, title + " (" + sub + ")");
  // The fit lives in natural-log space; convert to the log10 axes.
  const double ln10 = std::log(10.0);
  std::vector<SvgPoint> fit_line_pts;
  for (double lx : {lx0, lx1}) {
    const double ly = (intercept + slope * (lx * ln10)) / ln10;
    fit_line_pts.push_back({lx, ly});
  }
  plot.polyline(fit_line_pts, "#c44", 1.2, "5,4");
  for (const SvgPoint& p : logs) plot.circle(p.first, p.second, 3.5, "#246");
  return plot.str();
}

/// Overlaid density histograms of two sample sets on a shared grid.
inline std::string render_histogram_figure(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           std::size_t bins,
                                           const std::string& label_a,
                                           const std::string& label_b,
                                           const std::string& title) {
  if (a.empty() || b.empty() || bins < 2) {
    throw std::invalid_argument("figure: histogram needs samples and bins");
  }
  double lo = a[0], hi = a[0];
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double w = (hi - lo) / static_cast<double>(bins);
  auto density = [&](const std::vector<double>& s) {
    std::vector<double> d(bins, 0.0);
    for (double v : s) {
      std::size_t i = static_cast<std::size_t>((v - lo) / w);
      if (i >= bins) i = bins - 1;
      d[i] += 1.0;
    }
    for (double& v : d) v /= static_cast<double>(s.size()) * w;
    return d;
  };
  const std::vector<double> da = density(a), db = density(b);
  double dmax = 0.0;
  for (double v : da) dmax = std::max(dmax, v);
  for (double v : db) dmax = std::max(dmax, v);
  SvgPlot plot(520, 360, lo, hi, 0.0, dmax * 1.1 + 1e-12);
  auto steps = [&](const std::vector<double>& d) {
    std::vector<SvgPoint> pts;
    for (std::size_t i = 0; i < bins; ++i) {
      pts.push_back({lo + w * static_cast<double>(i), d[i]});
      pts.push_back({lo + w * static_cast<double>(i + 1), d[i]});
    }
    return pts;
  };
  std::vector<std::pair<double, std::string>> xt, yt;
  for (int i = 0; i <= 4; ++i) {
    const double x = lo + (hi - lo) * i / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2g", x);
    xt.push_back({x, buf});
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2g", dmax);
  yt.push_back({dmax, buf});
  plot.axes(xt, yt, "value", "density", title);
  std::vector<SvgPoint> fa = steps(da);
  fa.insert(fa.begin(), {lo, 0.0});
  fa.push_back({hi, 0.0});
  plot.polygon(fa, "#246", 0.25);
  plot.polyline(steps(da), "#246", 1.5);
  plot.polyline(steps(db), "#c44", 1.5);
  plot.text(lo + 0.02 * (hi - lo), dmax, label_a, "start", 4.0);
  plot.text(lo + 0.02 * (hi - lo), dmax * 0.92, label_b, "start", 4.0);
  return plot.str();
}

/// Forecast fan for one window and channel: outer and inner quantile
/// bands, the ensemble mean, and the realized path when provided.
inline std::string render_band_figure(
    const std::vector<double>& q05, const std::vector<double>& q25,
    const std::vector<double>& q50, const std::vector<double>& q75,
    const std::vector<double>& q95, const std::vector<double>& mean_path,
    const std::vector<double>& actual, const std::string& title) {
  const std::size_t l = q50.size();
  if (l < 2 || q05.size() != l || q25.size() != l || q75.size() != l ||
      q95.size() != l || mean_path.size() != l ||
      (!actual.empty() && actual.size() != l)) {
    throw std::invalid_argument("figure: band series lengths disagree");
  }
  double lo = q05[0], hi = q95[0];
  for (std::size_t t = 0; t < l; ++t) {
    lo = std::min({lo, q05[t], actual.empty() ? q05[t] : actual[t]});
    hi = std::max({hi, q95[t], actual.empty() ? q95[t] : actual[t]});
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double pad = 0.08 * (hi - lo);
  SvgPlot plot(640, 360, 0.0, static_cast<double>(l - 1), lo - pad, hi + pad);
  auto band = [&](const std::vector<double>& low,
                  const std::vector<double>& high, const std::string& color,
                  double opacity) {
    std::vector<SvgPoint> poly;
    for (std::size_t t = 0; t < l; ++t) {
      poly.push_back({static_cast<double>(t), low[t]});
    }
    for (std::size_t t = l; t-- > 0;) {
      poly.push_back({static_cast<double>(t), high[t]});
    }
    plot.polygon(poly, color, opacity);
  };
  std::vector<std::pair<double, std::string>> xt, yt;
  for (int i = 0; i <= 4; ++i) {
    const double x = (l - 1) * i / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%d", static_cast<int>(x));
    xt.push_back({x, buf});
  }
  for (int i = 0; i <= 2; ++i) {
    const double y = lo + (hi - lo) * i / 2.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2g", y);
    yt.push_back({y, buf});
  }
  plot.axes(xt, yt, "horizon step", "value", title);
  band(q05, q95, "#4a7", 0.18);
  band(q25, q75, "#4a7", 0.30);
  auto line = [&](const std::vector<double>& s, const std::string& color,
                  double width, const std::string& dash = "") {
    std::vector<SvgPoint> pts;
    for (std::size_t t = 0; t < l; ++t) {
      pts.push_back({static_cast<double>(t), s[t]});
    }
    plot.polyline(pts, color, width, dash);
  };
  line(q50, "#287", 1.4);
  line(mean_path, "#246", 1.6, "6,3");
  if (!actual.empty()) line(actual, "#222", 1.6);
  return plot.str();
}

}  // namespace ppm
