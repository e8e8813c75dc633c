#pragma once

// SVG figures from run directories: loss curves, the lambda/lr schedules and
// per-arm Dice box plots.

#include <filesystem>
#include <string>
#include <vector>

namespace mhal {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct LineChart {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  bool log_y = false;
};

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

std::string line_chart_svg(const LineChart& chart);
// Box = quartiles, whiskers = min/max, points overlaid.
std::string box_plot_svg(const std::string& title, const std::string& y_label, const std::vector<BoxGroup>& groups);

// run_dir is either one run (holding metrics.csv) or a directory whose
// subdirectories are runs. Returns the files written, sorted.
std::vector<std::string> write_plots(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir);

}  // namespace mhal
