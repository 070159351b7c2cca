#pragma once

#include <string>
#include <vector>

namespace idguard {

struct PlotSeries {
  std::string name;
  std::vector<double> y;
};

// Minimal self-contained SVG line chart; x values are shared across series.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::vector<double>& x, const std::vector<PlotSeries>& series);

}  // namespace idguard
