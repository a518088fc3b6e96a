#include "flashsplit/core/chart.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/font.hpp"
#include "flashsplit/core/png_io.hpp"

namespace flashsplit {

namespace {

struct Canvas {
    int w, h;
    std::vector<uint8_t> px;
    Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<size_t>(w_) * h_ * 3, 255) {}

    void set(int x, int y, const uint8_t* c) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        uint8_t* p = &px[(static_cast<size_t>(y) * w + x) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    void hline(int x0, int x1, int y, const uint8_t* c) {
        if (x0 > x1) std::swap(x0, x1);
        for (int x = x0; x <= x1; ++x) set(x, y, c);
    }

    void vline(int x, int y0, int y1, const uint8_t* c) {
        if (y0 > y1) std::swap(y0, y1);
        for (int y = y0; y <= y1; ++y) set(x, y, c);
    }

    void rect_fill(int x0, int y0, int x1, int y1, const uint8_t* c) {
        for (int y = y0; y <= y1; ++y) hline(x0, x1, y, c);
    }

    void line(int x0, int y0, int x1, int y1, const uint8_t* c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
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

    void text(int x, int y, const std::string& s, int scale, const uint8_t* c) {
        int cx = x;
        for (char ch : s) {
            const uint8_t* rows = glyph5x7(ch);
            if (rows)
                for (int ry = 0; ry < kGlyphH; ++ry)
                    for (int rx = 0; rx < kGlyphW; ++rx)
                        if (rows[ry] & (1 << (kGlyphW - 1 - rx)))
                            for (int sy = 0; sy < scale; ++sy)
                                for (int sx = 0; sx < scale; ++sx)
                                    set(cx + rx * scale + sx, y + ry * scale + sy, c);
            cx += (kGlyphW + 1) * scale;
        }
    }

    int text_width(const std::string& s, int scale) const {
        return static_cast<int>(s.size()) * (kGlyphW + 1) * scale;
    }
};

constexpr uint8_t kBlack[3] = {0, 0, 0};
constexpr uint8_t kGrey[3] = {210, 210, 210};

std::string fmt_tick(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Round step to 1/2/5 x 10^k covering roughly `target` intervals.
double nice_step(double span, int target) {
    if (span <= 0.0) return 1.0;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double r = raw / mag;
    double step;
    if (r < 1.5)
        step = 1.0;
    else if (r < 3.5)
        step = 2.0;
    else if (r < 7.5)
        step = 5.0;
    else
        step = 10.0;
    return step * mag;
}

struct AxisMap {
    double lo, hi;
    int p0, p1; // pixel range (p0 maps lo)
    int map(double v) const {
        const double t = (v - lo) / (hi - lo);
        return p0 + static_cast<int>(std::lround(t * (p1 - p0)));
    }
};

void pad_range(double& lo, double& hi) {
    if (hi <= lo) {
        hi = lo + 1.0;
        lo -= 1.0;
    } else {
        const double pad = 0.06 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
}

} // namespace

void render_line_chart(const std::string& path, const std::string& title,
                       const std::string& xlabel, const std::string& ylabel,
                       const std::vector<ChartSeries>& series, int width, int height) {
    require(!series.empty(), ErrorKind::contract, "line chart needs at least one series");
    Canvas cv(width, height);
    const int ml = 64, mr = 16, mt = 34, mb = 52;

    double xlo = series[0].x.empty() ? 0.0 : series[0].x[0], xhi = xlo;
    double ylo = series[0].y.empty() ? 0.0 : series[0].y[0], yhi = ylo;
    for (const auto& s : series) {
        require(s.x.size() == s.y.size(), ErrorKind::contract, "series x/y length mismatch");
        for (double v : s.x) {
            xlo = std::min(xlo, v);
            xhi = std::max(xhi, v);
        }
        for (double v : s.y) {
            ylo = std::min(ylo, v);
            yhi = std::max(yhi, v);
        }
    }
    pad_range(xlo, xhi);
    pad_range(ylo, yhi);

    AxisMap xa{xlo, xhi, ml, width - mr};
    AxisMap ya{ylo, yhi, height - mb, mt};

    const double xs = nice_step(xhi - xlo, 6), ys = nice_step(yhi - ylo, 6);
    for (double v = std::ceil(xlo / xs) * xs; v <= xhi + 1e-12; v += xs) {
        const int px = xa.map(v);
        cv.vline(px, mt, height - mb, kGrey);
        const std::string lab = fmt_tick(v);
        cv.text(px - cv.text_width(lab, 1) / 2, height - mb + 6, lab, 1, kBlack);
    }
    for (double v = std::ceil(ylo / ys) * ys; v <= yhi + 1e-12; v += ys) {
        const int py = ya.map(v);
        cv.hline(ml, width - mr, py, kGrey);
        const std::string lab = fmt_tick(v);
        cv.text(ml - 6 - cv.text_width(lab, 1), py - 3, lab, 1, kBlack);
    }
    cv.hline(ml, width - mr, height - mb, kBlack);
    cv.vline(ml, mt, height - mb, kBlack);

    for (const auto& s : series)
        for (size_t i = 1; i < s.x.size(); ++i)
            cv.line(xa.map(s.x[i - 1]), ya.map(s.y[i - 1]), xa.map(s.x[i]), ya.map(s.y[i]),
                    s.color);
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            const int px = xa.map(s.x[i]), py = ya.map(s.y[i]);
            cv.rect_fill(px - 2, py - 2, px + 2, py + 2, s.color);
        }

    cv.text(ml, 10, title, 2, kBlack);
    cv.text(width / 2 - cv.text_width(xlabel, 1) / 2, height - 16, xlabel, 1, kBlack);
    cv.text(4, mt - 12, ylabel, 1, kBlack);

    int ly = mt + 6;
    for (const auto& s : series) {
        cv.rect_fill(width - mr - 150, ly, width - mr - 138, ly + 8, s.color);
        cv.text(width - mr - 132, ly, s.label, 1, kBlack);
        ly += 14;
    }

    write_png8(path, cv.px, width, height);
}

void render_bar_chart(const std::string& path, const std::string& title,
                      const std::string& ylabel, const std::vector<ChartBar>& bars, int width,
                      int height) {
    require(!bars.empty(), ErrorKind::contract, "bar chart needs at least one bar");
    Canvas cv(width, height);
    const int ml = 64, mr = 16, mt = 34, mb = 70;

    double ylo = 0.0, yhi = bars[0].value;
    for (const auto& b : bars) {
        ylo = std::min(ylo, b.value);
        yhi = std::max(yhi, b.value);
    }
    pad_range(ylo, yhi);
    AxisMap ya{ylo, yhi, height - mb, mt};

    const double ys = nice_step(yhi - ylo, 6);
    for (double v = std::ceil(ylo / ys) * ys; v <= yhi + 1e-12; v += ys) {
        const int py = ya.map(v);
        cv.hline(ml, width - mr, py, kGrey);
        const std::string lab = fmt_tick(v);
        cv.text(ml - 6 - cv.text_width(lab, 1), py - 3, lab, 1, kBlack);
    }
    cv.hline(ml, width - mr, height - mb, kBlack);
    cv.vline(ml, mt, height - mb, kBlack);

    const int n = static_cast<int>(bars.size());
    const int span = width - ml - mr;
    const int slot = span / n;
    const int bw = std::max(8, slot * 6 / 10);
    const int ybase = ya.map(std::max(0.0, ylo));
    for (int i = 0; i < n; ++i) {
        const int cx = ml + slot * i + slot / 2;
        const int yv = ya.map(bars[static_cast<size_t>(i)].value);
        cv.rect_fill(cx - bw / 2, std::min(yv, ybase), cx + bw / 2, std::max(yv, ybase),
                     bars[static_cast<size_t>(i)].color);
        const std::string& lab = bars[static_cast<size_t>(i)].label;
        cv.text(cx - cv.text_width(lab, 1) / 2, height - mb + 8 + (i % 2) * 12, lab, 1, kBlack);
        const std::string val = fmt_tick(bars[static_cast<size_t>(i)].value);
        cv.text(cx - cv.text_width(val, 1) / 2, std::min(yv, ybase) - 10, val, 1, kBlack);
    }

    cv.text(ml, 10, title, 2, kBlack);
    cv.text(4, mt - 12, ylabel, 1, kBlack);

    write_png8(path, cv.px, width, height);
}

} // namespace flashsplit
