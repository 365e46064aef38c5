#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "ugac/data.hpp"
#include "ugac/errors.hpp"
#include "ugac/tensor.hpp"

namespace ugac::plot {

struct Color {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Color kBlack{0, 0, 0};
inline constexpr Color kGray{150, 150, 150};
inline const std::vector<Color>& palette() {
    static const std::vector<Color> p = {
        {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}};
    return p;
}

namespace detail {

// 5x7 glyphs for chart labels: digits, minus, dot, plus and the uppercase
// letters the axis titles use. Each byte is one row, low 5 bits used.
inline const std::uint8_t* glyph(char c) {
    static const struct {
        char ch;
        std::uint8_t rows[7];
    } table[] = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    };
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& e : table)
        if (e.ch == up) return e.rows;
    return nullptr; // unknown chars render as space
}

} // namespace detail

/// Tiny RGB canvas with just enough drawing for line/scatter charts.
class Canvas {
public:
    Canvas(std::size_t width, std::size_t height)
        : w_(width), h_(height), pix_(width * height * 3, 255) {}

    std::size_t width() const { return w_; }
    std::size_t height() const { return h_; }

    void set(long x, long y, Color c) {
        if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
        const std::size_t i =
            (static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)) * 3;
        pix_[i] = c.r;
        pix_[i + 1] = c.g;
        pix_[i + 2] = c.b;
    }

    void line(double x0, double y0, double x1, double y1, Color c) {
        // Bresenham on rounded endpoints.
        long ax = std::lround(x0), ay = std::lround(y0);
        long bx = std::lround(x1), by = std::lround(y1);
        const long dx = std::labs(bx - ax), sx = ax < bx ? 1 : -1;
        const long dy = -std::labs(by - ay), sy = ay < by ? 1 : -1;
        long err = dx + dy;
        for (;;) {
            set(ax, ay, c);
            if (ax == bx && ay == by) break;
            const long e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                ax += sx;
            }
            if (e2 <= dx) {
                err += dx;
                ay += sy;
            }
        }
    }

    void disc(double cx, double cy, long radius, Color c) {
        for (long dy = -radius; dy <= radius; ++dy)
            for (long dx = -radius; dx <= radius; ++dx)
                if (dx * dx + dy * dy <= radius * radius)
                    set(std::lround(cx) + dx, std::lround(cy) + dy, c);
    }

    void text(long x, long y, const std::string& s, Color c) {
        for (char ch : s) {
            if (const std::uint8_t* g = detail::glyph(ch)) {
                for (int ry = 0; ry < 7; ++ry)
                    for (int rx = 0; rx < 5; ++rx)
                        if (g[ry] & (1 << (4 - rx))) set(x + rx, y + ry, c);
            }
            x += 6;
        }
    }

    void save(const std::filesystem::path& path) const {
        std::vector<double> img(3 * h_ * w_);
        for (std::size_t y = 0; y < h_; ++y)
            for (std::size_t x = 0; x < w_; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    img[(c * h_ + y) * w_ + x] = pix_[(y * w_ + x) * 3 + c] / 255.0;
        data::save_png(path, Tensor::from(std::move(img), {3, h_, w_}));
    }

private:
    std::size_t w_, h_;
    std::vector<std::uint8_t> pix_;
};

struct Series {
    std::string name;
    std::vector<double> x, y;
};

namespace detail {

inline std::string format_tick(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    std::string s = os.str();
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

struct Frame {
    double x_min, x_max, y_min, y_max;
    std::size_t left = 48, right = 16, top = 24, bottom = 32;
    std::size_t w, h;

    double px(double x) const {
        const double span = x_max > x_min ? x_max - x_min : 1.0;
        return static_cast<double>(left) +
               (x - x_min) / span * static_cast<double>(w - left - right);
    }
    double py(double y) const {
        const double span = y_max > y_min ? y_max - y_min : 1.0;
        return static_cast<double>(h - bottom) -
               (y - y_min) / span * static_cast<double>(h - top - bottom);
    }
};

inline Frame fit_frame(const std::vector<Series>& series, std::size_t w, std::size_t h) {
    Frame f{0, 1, 0, 1, 48, 16, 24, 32, w, h};
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                f.x_min = f.x_max = s.x[i];
                f.y_min = f.y_max = s.y[i];
                first = false;
            }
            f.x_min = std::min(f.x_min, s.x[i]);
            f.x_max = std::max(f.x_max, s.x[i]);
            f.y_min = std::min(f.y_min, s.y[i]);
            f.y_max = std::max(f.y_max, s.y[i]);
        }
    if (f.y_max == f.y_min) {
        f.y_max += 1.0;
        f.y_min -= 1.0;
    }
    if (f.x_max == f.x_min) f.x_max += 1.0;
    return f;
}

inline void draw_axes(Canvas& cv, const Frame& f, const std::string& title) {
    cv.line(f.px(f.x_min), f.py(f.y_min), f.px(f.x_max), f.py(f.y_min), kBlack);
    cv.line(f.px(f.x_min), f.py(f.y_min), f.px(f.x_min), f.py(f.y_max), kBlack);
    cv.text(static_cast<long>(f.left), 8, title, kBlack);
    // Min/max tick labels on both axes.
    cv.text(static_cast<long>(f.px(f.x_min)) - 6, static_cast<long>(f.h - f.bottom) + 6,
            format_tick(f.x_min), kBlack);
    const std::string xmax = format_tick(f.x_max);
    cv.text(static_cast<long>(f.px(f.x_max)) - static_cast<long>(xmax.size() * 6) + 6,
            static_cast<long>(f.h - f.bottom) + 6, xmax, kBlack);
    cv.text(2, static_cast<long>(f.py(f.y_min)) - 3, format_tick(f.y_min), kBlack);
    cv.text(2, static_cast<long>(f.py(f.y_max)) - 3, format_tick(f.y_max), kBlack);
}

} // namespace detail

/// Multi-series line chart rendered straight to a PNG file.
inline void line_chart(const std::filesystem::path& path, const std::string& title,
                       const std::vector<Series>& series, std::size_t width = 480,
                       std::size_t height = 320) {
    Canvas cv(width, height);
    detail::Frame f = detail::fit_frame(series, width, height);
    detail::draw_axes(cv, f, title);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Color c = palette()[si % palette().size()];
        const Series& s = series[si];
        for (std::size_t i = 0; i + 1 < s.x.size(); ++i)
            cv.line(f.px(s.x[i]), f.py(s.y[i]), f.px(s.x[i + 1]), f.py(s.y[i + 1]), c);
        for (std::size_t i = 0; i < s.x.size(); ++i)
            cv.disc(f.px(s.x[i]), f.py(s.y[i]), 2, c);
        cv.text(static_cast<long>(f.left) + 8 + static_cast<long>(si) * 90,
                static_cast<long>(f.top) - 8, s.name, c);
    }
    cv.save(path);
}

/// Scatter plot rendered straight to a PNG file.
inline void scatter_chart(const std::filesystem::path& path, const std::string& title,
                          const std::vector<double>& xs, const std::vector<double>& ys,
                          std::size_t width = 480, std::size_t height = 320) {
    if (xs.size() != ys.size()) throw DimensionError("scatter_chart: size mismatch");
    Canvas cv(width, height);
    std::vector<Series> tmp{{"", xs, ys}};
    detail::Frame f = detail::fit_frame(tmp, width, height);
    detail::draw_axes(cv, f, title);
    for (std::size_t i = 0; i < xs.size(); ++i)
        cv.disc(f.px(xs[i]), f.py(ys[i]), 2, palette()[0]);
    cv.save(path);
}

} // namespace ugac::plot
