#pragma once

#include <string>
#include <vector>

namespace puridiff {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal deterministic SVG line chart.
void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel,
                        const std::vector<PlotSeries>& series);

// Grayscale image grid rendered as a 24-bit BMP. `images` are row-major
// H x W arrays in [0,1], laid out grid_rows x grid_cols (row-major order)
// with 1-pixel separators, each pixel upscaled `upscale` times.
void write_bmp_grid(const std::string& path, const std::vector<std::vector<double>>& images,
                    int h, int w, int grid_rows, int grid_cols, int upscale = 4);

}  // namespace puridiff
