#pragma once

#include <string>
#include <vector>

namespace fedn {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal deterministic SVG line chart (axes, ticks, legend).
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<PlotSeries>& series);

}  // namespace fedn
