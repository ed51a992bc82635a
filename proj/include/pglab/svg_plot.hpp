#pragma once

#include <string>
#include <vector>

namespace pglab {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

struct PlotOptions {
    std::string title;
    std::string x_label = "iteration k";
    std::string y_label;
    int width = 720;
    int height = 480;
    /// Points with y below this are dropped from log-scale curves.
    double y_floor = 1e-16;
};

/// Self-contained SVG with a log-scale y axis, gridlines and a legend.
std::string render_svg(const std::vector<PlotSeries>& series, const PlotOptions& options);

} // namespace pglab
