#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace advkoop {

/// 8-bit RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 255);
    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

void write_png(const Image& image, const std::filesystem::path& path);

/// Perceptually ordered colormap, t in [0, 1].
std::array<std::uint8_t, 3> colormap(double t);

/// 2-D field [rows, cols] drawn with `scale` pixels per cell. vmin == vmax
/// selects the field's own range.
Image heatmap(const torch::Tensor& field, int scale = 2, double vmin = 0.0, double vmax = 0.0);

/// KS-style space-time image: rows are time, columns are space.
Image spacetime(const torch::Tensor& series, int time_scale = 1, int space_scale = 1, double vmin = 0.0,
                double vmax = 0.0);

/// Line plot of several series sharing the x axis, with axes and light grid.
Image line_plot(const std::vector<std::vector<double>>& series, int width = 640, int height = 360,
                bool log_y = false);

/// Places images left to right with a white gutter.
Image hstack(const std::vector<Image>& images, int gutter = 8);
/// Places images top to bottom with a white gutter.
Image vstack(const std::vector<Image>& images, int gutter = 8);

/// Comma-separated columns with a header row; columns may differ in length.
void write_columns_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& columns);

/// Reads a CSV written by write_columns_csv (or any numeric CSV with a header).
void read_columns_csv(const std::filesystem::path& path, std::vector<std::string>& header,
                      std::vector<std::vector<double>>& columns);

} // namespace advkoop
