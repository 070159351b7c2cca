#include "idguard/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace idguard {

namespace {
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
}

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::vector<double>& x, const std::vector<PlotSeries>& series) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_line_chart_svg: cannot open " + path);

  const int W = 760, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (!x.empty()) {
    xmin = *std::min_element(x.begin(), x.end());
    xmax = *std::max_element(x.begin(), x.end());
  }
  bool first = true;
  for (const auto& s : series)
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      if (first) {
        ymin = ymax = v;
        first = false;
      } else {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double v) { return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb); };

  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-family='sans-serif' "
        "font-size='16'>"
     << title << "</text>\n";
  os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
     << "' stroke='black'/>\n";
  os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
     << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x='" << px(xv) << "' y='" << H - mb + 18
       << "' text-anchor='middle' font-family='sans-serif' font-size='11'>" << xv << "</text>\n";
    os << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
       << "' text-anchor='end' font-family='sans-serif' font-size='11'>" << yv << "</text>\n";
  }
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 6];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (size_t i = 0; i < series[s].y.size() && i < x.size(); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      os << px(x[i]) << "," << py(series[s].y[i]) << " ";
    }
    os << "'/>\n";
    os << "<text x='" << W - mr - 140 << "' y='" << mt + 16 + 16 * static_cast<int>(s)
       << "' font-family='sans-serif' font-size='12' fill='" << color << "'>" << series[s].name
       << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace idguard
