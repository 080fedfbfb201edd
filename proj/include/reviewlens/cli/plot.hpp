#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

// Minimal static SVG charts for run reports. Output is deterministic text.
namespace reviewlens::cli::plot {

struct Range {
  std::string label;
  double min = 0, mean = 0, max = 0;
};

struct Series {
  std::string name;
  std::vector<double> ys;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};
  return palette[i % 12];
}

inline void open(std::ostream& out, double w, double h, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << num(w / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
}

inline void line(std::ostream& out, double x1, double y1, double x2, double y2, const char* stroke, double width = 1) {
  out << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
      << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
}

inline void text(std::ostream& out, double x, double y, const std::string& s, const char* anchor = "start") {
  out << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\">" << escape(s)
      << "</text>\n";
}

}  // namespace detail

/// Horizontal min-max bars with a dot at the mean, one row per label; x axis spans [0, 1].
inline void range_plot(std::ostream& out, const std::string& title, const std::vector<Range>& rows,
                       const std::string& xlabel = "F1 (Macro)") {
  using namespace detail;
  const double left = 170, right = 30, top = 36, row_h = 22, width = 640;
  const double plot_w = width - left - right;
  const double height = top + row_h * static_cast<double>(rows.size()) + 46;
  auto x_of = [&](double v) { return left + std::clamp(v, 0.0, 1.0) * plot_w; };
  open(out, width, height, title);
  const double bottom = top + row_h * static_cast<double>(rows.size());
  for (int t = 0; t <= 10; t += 2) {
    const double x = x_of(t / 10.0);
    line(out, x, top, x, bottom, "#dddddd");
    text(out, x, bottom + 14, num(t / 10.0), "middle");
  }
  text(out, left + plot_w / 2, bottom + 32, xlabel, "middle");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double y = top + row_h * (static_cast<double>(i) + 0.5);
    text(out, left - 8, y + 4, rows[i].label, "end");
    line(out, x_of(rows[i].min), y, x_of(rows[i].max), y, "#1f77b4", 3);
    out << "<circle cx=\"" << num(x_of(rows[i].mean)) << "\" cy=\"" << num(y) << "\" r=\"4\" fill=\"#d62728\"/>\n";
  }
  out << "</svg>\n";
}

/// One polyline per series over shared x values; y axis spans [0, 1].
inline void line_plot(std::ostream& out, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<double>& xs, const std::vector<Series>& series) {
  using namespace detail;
  const double left = 60, right = 170, top = 36, width = 720, height = 400, bottom_pad = 46;
  const double plot_w = width - left - right, plot_h = height - top - bottom_pad;
  const double xmin = xs.empty() ? 0 : *std::min_element(xs.begin(), xs.end());
  const double xmax = xs.empty() ? 1 : *std::max_element(xs.begin(), xs.end());
  const double span = xmax > xmin ? xmax - xmin : 1;
  auto x_of = [&](double v) { return left + (xmax > xmin ? (v - xmin) / span : 0.5) * plot_w; };
  auto y_of = [&](double v) { return top + (1 - std::clamp(v, 0.0, 1.0)) * plot_h; };
  open(out, width, height, title);
  for (int t = 0; t <= 10; t += 2) {
    const double y = y_of(t / 10.0);
    line(out, left, y, left + plot_w, y, "#dddddd");
    text(out, left - 6, y + 4, num(t / 10.0), "end");
  }
  for (double x : xs) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    text(out, x_of(x), top + plot_h + 14, buf, "middle");
  }
  text(out, left + plot_w / 2, height - 10, xlabel, "middle");
  out << "<text x=\"14\" y=\"" << num(top + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << num(top + plot_h / 2) << ")\">" << escape(ylabel) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << color(s) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < series[s].ys.size(); ++i)
      out << (i ? " " : "") << num(x_of(xs[i])) << ',' << num(y_of(series[s].ys[i]));
    out << "\"/>\n";
    const double ly = top + 14 * static_cast<double>(s);
    line(out, left + plot_w + 12, ly, left + plot_w + 30, ly, color(s), 2);
    text(out, left + plot_w + 34, ly + 4, series[s].name);
  }
  out << "</svg>\n";
}

/// Vertical bars; bin i covers [i*w, (i+1)*w) of the unit interval.
inline void histogram(std::ostream& out, const std::string& title, const std::vector<long long>& bins, double bin_width,
                      const std::string& xlabel = "share of sentences in review") {
  using namespace detail;
  const double left = 50, right = 20, top = 36, width = 520, height = 300, bottom_pad = 46;
  const double plot_w = width - left - right, plot_h = height - top - bottom_pad;
  const long long peak = bins.empty() ? 0 : *std::max_element(bins.begin(), bins.end());
  open(out, width, height, title);
  const double bar_w = bins.empty() ? 0 : plot_w / static_cast<double>(bins.size());
  line(out, left, top + plot_h, left + plot_w, top + plot_h, "#333333");
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double h = peak > 0 ? plot_h * static_cast<double>(bins[i]) / static_cast<double>(peak) : 0;
    out << "<rect x=\"" << num(left + bar_w * static_cast<double>(i) + 1) << "\" y=\"" << num(top + plot_h - h)
        << "\" width=\"" << num(std::max(bar_w - 2, 1.0)) << "\" height=\"" << num(h) << "\" fill=\"#1f77b4\"/>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    text(out, left + v * plot_w, top + plot_h + 14, num(v * bin_width * static_cast<double>(bins.size())), "middle");
  }
  text(out, left - 6, top + 4, std::to_string(peak), "end");
  text(out, left - 6, top + plot_h, "0", "end");
  text(out, left + plot_w / 2, height - 10, xlabel, "middle");
  out << "</svg>\n";
}

}  // namespace reviewlens::cli::plot
