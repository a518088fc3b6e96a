#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flashsplit {

// shared series colors so every report uses the same coding
inline const uint8_t kChartPalette[6][3] = {
    {204, 58, 58}, {58, 112, 204}, {46, 158, 90}, {214, 148, 36}, {140, 78, 190}, {60, 60, 60},
};

struct ChartSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    uint8_t color[3];
};

struct ChartBar {
    std::string label;
    double value;
    uint8_t color[3];
};

// Minimal deterministic plot renderers (fixed canvas, fixed tick logic, no
// timestamps), so chart PNGs are byte-reproducible.
void render_line_chart(const std::string& path, const std::string& title,
                       const std::string& xlabel, const std::string& ylabel,
                       const std::vector<ChartSeries>& series, int width = 640, int height = 440);

void render_bar_chart(const std::string& path, const std::string& title,
                      const std::string& ylabel, const std::vector<ChartBar>& bars,
                      int width = 640, int height = 440);

} // namespace flashsplit
