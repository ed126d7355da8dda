#pragma once

// Static SVG line charts. Each panel has its own axes; panels stack vertically.

#include <optional>
#include <string>
#include <vector>

namespace fidgap::io {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool step = false;  // draw as a staircase (zero-order hold)
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::optional<double> reference;  // horizontal dashed line
};

/// Non-finite points are skipped. An empty panel renders its frame only.
std::string render_svg(const std::vector<Panel>& panels, int width = 800, int panel_height = 300);

void write_svg(const std::string& path, const std::vector<Panel>& panels);

}  // namespace fidgap::io
