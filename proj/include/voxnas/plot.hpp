#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

// Static SVG charts for run reports.
namespace voxnas::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                       const std::string& y_label, const std::string& comment = {});

// One bar per label at the mean, with a +-std whisker and the raw points.
struct BarGroup {
  std::string label;
  double mean = 0.0, std = 0.0;
  std::vector<double> points;
};
std::string bar_chart(const std::string& title, const std::vector<BarGroup>& bars, const std::string& y_label,
                      const std::string& comment = {});

// Heat maps side by side on a shared colour scale.
struct HeatPanel {
  std::string title;
  Eigen::MatrixXd values;
};
std::string heatmap_grid(const std::string& title, const std::vector<HeatPanel>& panels,
                         const std::string& comment = {});

}  // namespace voxnas::plot
