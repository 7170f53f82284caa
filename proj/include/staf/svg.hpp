#pragma once

#include <string>
#include <vector>

namespace staf {

// One polyline; NaN entries leave gaps.
struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
};

// Minimal hand-emitted line chart: axes with tick labels, one colored
// polyline per series, a legend. Returns the SVG document.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series,
                           int width = 860, int height = 480);

}  // namespace staf
