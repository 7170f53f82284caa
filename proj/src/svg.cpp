#include "staf/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "staf/tensor.hpp"

namespace staf {

namespace {

const char* kColors[] = {"#1f6fb2", "#d1495b", "#3a7d44", "#8d5a97", "#c77d1e", "#3b3b3b"};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// A pleasant tick step: 1, 2, or 5 times a power of ten covering the span.
double tick_step(double span) {
  if (span <= 0) return 1.0;
  const double raw = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  if (r < 1.5) return mag;
  if (r < 3.5) return 2.0 * mag;
  if (r < 7.5) return 5.0 * mag;
  return 10.0 * mag;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series,
                           int width, int height) {
  require(!series.empty(), "chart needs at least one series");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "series x/y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  require(std::isfinite(xmin) && std::isfinite(ymin), "chart needs at least one finite point");
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  const double ml = 72, mr = 24, mt = 44, mb = 52;
  const double pw = width - ml - mr, ph = height - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
     << " font-size=\"15\" fill=\"#222\">" << title << "</text>\n";

  // Gridlines and ticks.
  const double ys = tick_step(ymax - ymin);
  for (double v = std::ceil(ymin / ys) * ys; v <= ymax + 1e-12 * ys; v += ys) {
    os << "<line x1=\"" << ml << "\" y1=\"" << py(v) << "\" x2=\"" << ml + pw << "\" y2=\""
       << py(v) << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(v) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#555\">"
       << fmt(v) << "</text>\n";
  }
  const double xs = tick_step(xmax - xmin);
  for (double v = std::ceil(xmin / xs) * xs; v <= xmax + 1e-12 * xs; v += xs) {
    os << "<line x1=\"" << px(v) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(v) << "\" y2=\""
       << mt + ph + 5 << "\" stroke=\"#888\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << px(v) << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#555\">"
       << fmt(v) << "</text>\n";
  }
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">"
     << x_label << "</text>\n";
  os << "<text x=\"18\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\""
     << " transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % (sizeof(kColors) / sizeof(kColors[0]))];
    std::ostringstream pts;
    bool open = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        if (open) {
          os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
             << "\" stroke-width=\"1.6\"/>\n";
          pts.str("");
          open = false;
        }
        continue;
      }
      pts << px(s.x[i]) << "," << py(s.y[i]) << " ";
      open = true;
    }
    if (open)
      os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
         << "\" stroke-width=\"1.6\"/>\n";
    const double lx = ml + pw - 150, ly = mt + 16 + 18 * static_cast<double>(k);
    os << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 22 << "\" y2=\""
       << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << lx + 28 << "\" y=\"" << ly
       << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">" << s.label
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace staf
