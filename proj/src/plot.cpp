#include "partwhole/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "partwhole/error.hpp"
#include "partwhole/stats.hpp"

namespace partwhole {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kLeft = 70;
constexpr int kRight = 20;
constexpr int kTop = 40;
constexpr int kBottom = 50;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo, hi;
  double map(double v, double px_lo, double px_hi) const {
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

Axis padded(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
}

void y_ticks(std::ostringstream& os, const Axis& y) {
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y.map(v, kHeight - kBottom, kTop);
    os << "<line x1=\"" << kLeft - 4 << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << py << "\" y2=\"" << py
       << "\" stroke=\"#ddd\"/>\n<text x=\"" << kLeft - 8 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
       << fmt(v) << "</text>\n";
  }
}

}  // namespace

std::string boxplot_svg(const std::string& title, const std::vector<BoxGroup>& groups, const std::string& y_label) {
  require(!groups.empty(), "groups", "must be non-empty");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& g : groups) {
    require(!g.values.empty(), "groups", "group '" + g.label + "' is empty");
    lo = std::min(lo, *std::min_element(g.values.begin(), g.values.end()));
    hi = std::max(hi, *std::max_element(g.values.begin(), g.values.end()));
  }
  const Axis y = padded(lo, hi);
  std::ostringstream os;
  header(os, title);
  y_ticks(os, y);
  os << "<text transform=\"translate(16," << kHeight / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(y_label) << "</text>\n";
  const double slot = static_cast<double>(kWidth - kLeft - kRight) / static_cast<double>(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto s = summarize(groups[i].values);
    const double iqr = s.q3 - s.q1;
    double wlo = s.max, whi = s.min;
    for (double v : groups[i].values) {
      if (v >= s.q1 - 1.5 * iqr) wlo = std::min(wlo, v);
      if (v <= s.q3 + 1.5 * iqr) whi = std::max(whi, v);
    }
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    const double half = std::min(40.0, slot * 0.3);
    auto py = [&](double v) { return y.map(v, kHeight - kBottom, kTop); };
    const char* color = kPalette[i % std::size(kPalette)];
    os << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << py(wlo) << "\" y2=\"" << py(whi)
       << "\" stroke=\"black\"/>\n"
       << "<rect x=\"" << cx - half << "\" y=\"" << py(s.q3) << "\" width=\"" << 2 * half << "\" height=\""
       << std::max(0.5, py(s.q1) - py(s.q3)) << "\" fill=\"" << color << "\" fill-opacity=\"0.6\" stroke=\"black\"/>\n"
       << "<line x1=\"" << cx - half << "\" x2=\"" << cx + half << "\" y1=\"" << py(s.median) << "\" y2=\""
       << py(s.median) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double v : groups[i].values)
      if (v < wlo || v > whi)
        os << "<circle cx=\"" << cx << "\" cy=\"" << py(v) << "\" r=\"2\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << cx << "\" y=\"" << kHeight - kBottom + 18 << "\" text-anchor=\"middle\">"
       << escape(groups[i].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string scatter_svg(const std::string& title, const std::vector<std::pair<double, double>>& points,
                        const std::vector<int>& labels) {
  require(points.size() == labels.size(), "labels", "one label per point");
  require(!points.empty(), "points", "must be non-empty");
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const auto& [px, py] : points) {
    xlo = std::min(xlo, px);
    xhi = std::max(xhi, px);
    ylo = std::min(ylo, py);
    yhi = std::max(yhi, py);
  }
  const Axis x = padded(xlo, xhi);
  const Axis y = padded(ylo, yhi);
  std::ostringstream os;
  header(os, title);
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
     << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"#999\"/>\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto color = kPalette[static_cast<std::size_t>(std::abs(labels[i])) % std::size(kPalette)];
    os << "<circle cx=\"" << x.map(points[i].first, kLeft, kWidth - kRight) << "\" cy=\""
       << y.map(points[i].second, kHeight - kBottom, kTop) << "\" r=\"3\" fill=\"" << color
       << "\" fill-opacity=\"0.7\"><title>" << labels[i] << "</title></circle>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace partwhole
