#pragma once

#include <string>
#include <vector>

namespace cadlab::cli {

struct PlotSeries {
  std::string label;
  std::vector<double> values;
  std::string color = "#1f77b4";
};

/// Standalone SVG line chart with one series on the left axis and one on the right.
std::string two_axis_plot(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                          const PlotSeries& left, const PlotSeries& right);

}  // namespace cadlab::cli
