#include "advkoop/figures.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace advkoop {

Image::Image(int w, int h, std::uint8_t fill)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill)
{
}

void Image::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b)
{
    if (x < 0 || y < 0 || x >= width || y >= height) {
        return;
    }
    auto* p = &rgb[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
}

void write_png(const Image& image, const std::filesystem::path& path)
{
    if (image.width <= 0 || image.height <= 0) {
        throw std::invalid_argument("write_png: empty image");
    }
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!file) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        auto* row = const_cast<png_bytep>(&image.rgb[static_cast<std::size_t>(y) * image.width * 3]);
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::array<std::uint8_t, 3> colormap(double t)
{
    // viridis control points
    static constexpr std::array<std::array<double, 3>, 9> stops{{{0.267, 0.005, 0.329},
                                                                 {0.279, 0.175, 0.483},
                                                                 {0.230, 0.322, 0.546},
                                                                 {0.173, 0.449, 0.558},
                                                                 {0.128, 0.567, 0.551},
                                                                 {0.153, 0.683, 0.502},
                                                                 {0.369, 0.789, 0.383},
                                                                 {0.678, 0.864, 0.190},
                                                                 {0.993, 0.906, 0.144}}};
    if (!std::isfinite(t)) {
        return {255, 0, 255};
    }
    t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
    const double f = t - static_cast<double>(i);
    std::array<std::uint8_t, 3> c{};
    for (int k = 0; k < 3; ++k) {
        c[k] = static_cast<std::uint8_t>(std::lround(255.0 * ((1 - f) * stops[i][k] + f * stops[i + 1][k])));
    }
    return c;
}

namespace {

Image raster(const torch::Tensor& grid, int sx, int sy, double vmin, double vmax)
{
    if (grid.dim() != 2 || grid.numel() == 0) {
        throw std::invalid_argument("expected a non-empty 2-D array");
    }
    const auto g = grid.to(torch::kFloat64).contiguous();
    if (vmin == vmax) {
        vmin = g.min().item<double>();
        vmax = g.max().item<double>();
        if (vmin == vmax) {
            vmax = vmin + 1.0;
        }
    }
    const auto rows = static_cast<int>(g.size(0));
    const auto cols = static_cast<int>(g.size(1));
    const auto* v = g.data_ptr<double>();
    Image img(cols * sx, rows * sy);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const auto col = colormap((v[r * cols + c] - vmin) / (vmax - vmin));
            for (int dy = 0; dy < sy; ++dy) {
                for (int dx = 0; dx < sx; ++dx) {
                    img.set(c * sx + dx, r * sy + dy, col[0], col[1], col[2]);
                }
            }
        }
    }
    return img;
}

} // namespace

Image heatmap(const torch::Tensor& field, int scale, double vmin, double vmax)
{
    return raster(field, scale, scale, vmin, vmax);
}

Image spacetime(const torch::Tensor& series, int time_scale, int space_scale, double vmin, double vmax)
{
    return raster(series, space_scale, time_scale, vmin, vmax);
}

namespace {

void line(Image& img, int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& c)
{
    const int dx = std::abs(x1 - x0);
    const int dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        img.set(x0, y0, c[0], c[1], c[2]);
        img.set(x0, y0 + 1, c[0], c[1], c[2]);
        if (x0 == x1 && y0 == y1) {
            break;
        }
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette{{{31, 119, 180},
                                                               {255, 127, 14},
                                                               {44, 160, 44},
                                                               {214, 39, 40},
                                                               {148, 103, 189},
                                                               {0, 0, 0}}};

} // namespace

Image line_plot(const std::vector<std::vector<double>>& series, int width, int height, bool log_y)
{
    Image img(width, height);
    const int left = 40;
    const int right = 12;
    const int top = 12;
    const int bottom = 30;
    const int pw = width - left - right;
    const int ph = height - top - bottom;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    std::size_t n = 0;
    auto tf = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
    for (const auto& s : series) {
        n = std::max(n, s.size());
        for (double v : s) {
            if (std::isfinite(v) && (!log_y || v > 0)) {
                lo = std::min(lo, tf(v));
                hi = std::max(hi, tf(v));
            }
        }
    }
    if (!(hi > lo)) {
        hi = lo + 1.0;
    }
    if (!std::isfinite(lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    const std::array<std::uint8_t, 3> grid{225, 225, 225};
    for (int k = 0; k <= 4; ++k) {
        const int y = top + ph * k / 4;
        const int x = left + pw * k / 4;
        line(img, left, y, left + pw, y, grid);
        line(img, x, top, x, top + ph, grid);
    }
    const std::array<std::uint8_t, 3> axis{0, 0, 0};
    line(img, left, top + ph, left + pw, top + ph, axis);
    line(img, left, top, left, top + ph, axis);

    auto px = [&](std::size_t i) {
        return left + (n > 1 ? static_cast<int>(std::lround(static_cast<double>(pw) * i / (n - 1))) : pw / 2);
    };
    auto py = [&](double v) { return top + static_cast<int>(std::lround(ph * (1.0 - (tf(v) - lo) / (hi - lo)))); };
    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& c = kPalette[s % kPalette.size()];
        for (std::size_t i = 1; i < series[s].size(); ++i) {
            const double a = series[s][i - 1];
            const double b = series[s][i];
            if (std::isfinite(a) && std::isfinite(b)) {
                line(img, px(i - 1), py(a), px(i), py(b), c);
            }
        }
        if (series[s].size() == 1) {
            line(img, px(0) - 2, py(series[s][0]), px(0) + 2, py(series[s][0]), c);
        }
    }
    return img;
}

Image hstack(const std::vector<Image>& images, int gutter)
{
    int w = 0;
    int h = 0;
    for (const auto& im : images) {
        w += im.width + gutter;
        h = std::max(h, im.height);
    }
    Image out(std::max(1, w - gutter), std::max(1, h));
    int x0 = 0;
    for (const auto& im : images) {
        for (int y = 0; y < im.height; ++y) {
            std::copy_n(&im.rgb[static_cast<std::size_t>(y) * im.width * 3], im.width * 3,
                        &out.rgb[(static_cast<std::size_t>(y) * out.width + x0) * 3]);
        }
        x0 += im.width + gutter;
    }
    return out;
}

Image vstack(const std::vector<Image>& images, int gutter)
{
    int w = 0;
    int h = 0;
    for (const auto& im : images) {
        h += im.height + gutter;
        w = std::max(w, im.width);
    }
    Image out(std::max(1, w), std::max(1, h - gutter));
    int y0 = 0;
    for (const auto& im : images) {
        for (int y = 0; y < im.height; ++y) {
            std::copy_n(&im.rgb[static_cast<std::size_t>(y) * im.width * 3], im.width * 3,
                        &out.rgb[static_cast<std::size_t>(y0 + y) * out.width * 3]);
        }
        y0 += im.height + gutter;
    }
    return out;
}

void write_columns_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& columns)
{
    if (header.size() != columns.size()) {
        throw std::invalid_argument("write_columns_csv: header and column counts differ");
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    std::size_t rows = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
        out << (c ? "," : "") << header[c];
        rows = std::max(rows, columns[c].size());
    }
    out << '\n' << std::setprecision(12);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            if (c) {
                out << ',';
            }
            if (r < columns[c].size()) {
                out << columns[c][r];
            }
        }
        out << '\n';
    }
}

void read_columns_csv(const std::filesystem::path& path, std::vector<std::string>& header,
                      std::vector<std::vector<double>>& columns)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    header.clear();
    columns.clear();
    std::string line_text;
    if (!std::getline(in, line_text)) {
        throw std::runtime_error(path.string() + " is empty");
    }
    std::stringstream hs(line_text);
    for (std::string cell; std::getline(hs, cell, ',');) {
        header.push_back(cell);
    }
    columns.resize(header.size());
    while (std::getline(in, line_text)) {
        std::stringstream ls(line_text);
        std::size_t c = 0;
        for (std::string cell; std::getline(ls, cell, ',') && c < columns.size(); ++c) {
            if (!cell.empty()) {
                columns[c].push_back(std::stod(cell));
            }
        }
    }
}

} // namespace advkoop
