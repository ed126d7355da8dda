#include "fidgap/svg_plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fidgap::io {

namespace {

std::string escape(const std::string& s) {
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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finalize() {
    if (!(lo <= hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12 * (1.0 + std::abs(hi))) {
      const double pad = 0.5 * (1.0 + std::abs(hi)) * 1e-3;
      lo -= pad;
      hi += pad;
    } else {
      const double pad = 0.05 * (hi - lo);
      lo -= pad;
      hi += pad;
    }
  }
};

void render_panel(std::string& out, const Panel& panel, double top, int width, int height) {
  const double left = 80.0;
  const double right = width - 20.0;
  const double plot_top = top + 30.0;
  const double bottom = top + height - 45.0;

  Range xr, yr;
  for (const auto& s : panel.series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  if (panel.reference) yr.add(*panel.reference);
  xr.finalize();
  yr.finalize();
  auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * (right - left); };
  auto py = [&](double y) { return bottom - (y - yr.lo) / (yr.hi - yr.lo) * (bottom - plot_top); };

  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                     0.5 * (left + right), top + 18.0, escape(panel.title));
  out += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"#444\"/>\n",
                     left, plot_top, right - left, bottom - plot_top);
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"middle\">{:.4g}</text>\n",
                       px(fx), bottom + 14.0, fx);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"end\">{:.4g}</text>\n",
                       left - 4.0, py(fy) + 3.0, fy);
    out += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n", left,
                       py(fy), right, py(fy));
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                     0.5 * (left + right), bottom + 32.0, escape(panel.x_label));
  out += fmt::format(
      "<text x=\"14\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1f})\">{}</text>\n",
      0.5 * (plot_top + bottom), 0.5 * (plot_top + bottom), escape(panel.y_label));

  if (panel.reference) {
    out += fmt::format(
        "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>\n", left,
        py(*panel.reference), right, py(*panel.reference));
  }

  double legend_y = plot_top + 14.0;
  for (const auto& s : panel.series) {
    std::string points;
    const auto n = std::min(s.x.size(), s.y.size());
    double last_y = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (s.step && std::isfinite(last_y)) points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(last_y));
      points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
      last_y = s.y[i];
    }
    if (!points.empty()) points.pop_back();
    out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       escape(s.color), points);
    if (!s.name.empty()) {
      out += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                         right - 150.0, legend_y - 4.0, right - 130.0, legend_y - 4.0, escape(s.color));
      out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\">{}</text>\n", right - 125.0, legend_y,
                         escape(s.name));
      legend_y += 15.0;
    }
  }
}

}  // namespace

std::string render_svg(const std::vector<Panel>& panels, int width, int panel_height) {
  const int count = std::max<int>(1, static_cast<int>(panels.size()));
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      width, count * panel_height);
  for (std::size_t i = 0; i < panels.size(); ++i) {
    render_panel(out, panels[i], static_cast<double>(i) * panel_height, width, panel_height);
  }
  out += "</svg>\n";
  return out;
}

void write_svg(const std::string& path, const std::vector<Panel>& panels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  out << render_svg(panels);
}

}  // namespace fidgap::io
