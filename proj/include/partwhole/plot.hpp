#pragma once

#include <string>
#include <utility>
#include <vector>

namespace partwhole {

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

/// Standalone SVG with one box (quartiles, median, 1.5 IQR whiskers) per group.
std::string boxplot_svg(const std::string& title, const std::vector<BoxGroup>& groups, const std::string& y_label);

/// Standalone SVG scatter; points sharing a label share a color.
std::string scatter_svg(const std::string& title, const std::vector<std::pair<double, double>>& points,
                        const std::vector<int>& labels);

}  // namespace partwhole
