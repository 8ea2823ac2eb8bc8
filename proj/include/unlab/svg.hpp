#pragma once

#include <optional>
#include <string>
#include <vector>

namespace unlab {

struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
    std::string label;
    std::string color = "#2b6cb0";
};

// both axes span [0, 1]
void write_scatter_svg(const std::string& path, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<ScatterPoint>& points);

// rows x cols heatmap; nullopt cells render as grey "n/a"
void write_heatmap_svg(const std::string& path, const std::string& title,
                       const std::vector<std::string>& row_labels,
                       const std::vector<std::string>& col_labels,
                       const std::vector<std::vector<std::optional<double>>>& values);

void write_bars_svg(const std::string& path, const std::string& title,
                    const std::vector<std::string>& labels, const std::vector<double>& values);

}  // namespace unlab
