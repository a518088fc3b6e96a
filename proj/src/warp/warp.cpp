#include "flashsplit/warp/warp.hpp"

#include <algorithm>
#include <cmath>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/exec.hpp"

namespace flashsplit {

namespace {

const char* kind_name(WarpKind k) {
    switch (k) {
        case WarpKind::identity: return "identity";
        case WarpKind::translation: return "translation";
        case WarpKind::homography: return "homography";
        case WarpKind::parallax: return "parallax";
    }
    return "?";
}

WarpKind kind_from_name(const std::string& s) {
    if (s == "identity") return WarpKind::identity;
    if (s == "translation") return WarpKind::translation;
    if (s == "homography") return WarpKind::homography;
    if (s == "parallax") return WarpKind::parallax;
    raise(ErrorKind::load, "unknown warp kind: " + s);
}

double det3(const double m[9]) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

inline int wrap(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

// 8x8 Gaussian elimination with partial pivoting, a is row-major, b the rhs
void solve8(double a[64], double b[8], double x[8]) {
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r * 8 + col]) > std::abs(a[piv * 8 + col])) piv = r;
        require(std::abs(a[piv * 8 + col]) > 1e-12, ErrorKind::degenerate,
                "corner fit is singular");
        if (piv != col) {
            for (int c = 0; c < 8; ++c) std::swap(a[col * 8 + c], a[piv * 8 + c]);
            std::swap(b[col], b[piv]);
        }
        for (int r = col + 1; r < 8; ++r) {
            double f = a[r * 8 + col] / a[col * 8 + col];
            for (int c = col; c < 8; ++c) a[r * 8 + c] -= f * a[col * 8 + c];
            b[r] -= f * b[col];
        }
    }
    for (int r = 7; r >= 0; --r) {
        double acc = b[r];
        for (int c = r + 1; c < 8; ++c) acc -= a[r * 8 + c] * x[c];
        x[r] = acc / a[r * 8 + r];
    }
}

} // namespace

WarpParams translation_warp(double dx, double dy, WarpPad pad) {
    WarpParams w;
    w.kind = WarpKind::translation;
    w.dx = dx;
    w.dy = dy;
    w.pad = pad;
    return w;
}

WarpParams homography_warp(const double m[9], WarpPad pad) {
    WarpParams w;
    w.kind = WarpKind::homography;
    require(std::abs(m[8]) > 1e-12, ErrorKind::contract, "homography must have h33 != 0");
    for (int i = 0; i < 9; ++i) w.h[i] = m[i] / m[8];
    w.pad = pad;
    validate_warp(w);
    return w;
}

WarpParams parallax_warp(double shift_x, double shift_y, WarpPad pad) {
    WarpParams w;
    w.kind = WarpKind::parallax;
    w.shift_x = shift_x;
    w.shift_y = shift_y;
    w.pad = pad;
    return w;
}

void validate_warp(const WarpParams& w) {
    if (w.kind == WarpKind::homography)
        require(std::abs(det3(w.h)) > 1e-9, ErrorKind::contract, "homography is not invertible");
    if (w.kind == WarpKind::identity)
        require(w.dx == 0.0 && w.dy == 0.0 && w.shift_x == 0.0 && w.shift_y == 0.0,
                ErrorKind::contract, "identity warp must carry neutral parameters");
}

double warp_magnitude(const WarpParams& w, int size) {
    switch (w.kind) {
        case WarpKind::identity: return 0.0;
        case WarpKind::translation: return std::hypot(w.dx, w.dy);
        case WarpKind::parallax: return std::hypot(w.shift_x, w.shift_y);
        case WarpKind::homography: {
            double worst = 0.0;
            double e = double(size - 1);
            double corners[4][2] = {{0, 0}, {e, 0}, {e, e}, {0, e}};
            for (auto& cpt : corners) {
                double sx = 0.0, sy = 0.0;
                warp_source(w, cpt[0], cpt[1], 1.0, &sx, &sy);
                worst = std::max(worst, std::hypot(cpt[0] - sx, cpt[1] - sy));
            }
            return worst;
        }
    }
    return 0.0;
}

json warp_to_json(const WarpParams& w) {
    json j;
    j["kind"] = kind_name(w.kind);
    j["pad"] = w.pad == WarpPad::clamp ? "clamp" : "circular";
    switch (w.kind) {
        case WarpKind::identity: break;
        case WarpKind::translation:
            j["dx"] = w.dx;
            j["dy"] = w.dy;
            break;
        case WarpKind::homography:
            j["h"] = std::vector<double>(w.h, w.h + 9);
            break;
        case WarpKind::parallax:
            j["shift_x"] = w.shift_x;
            j["shift_y"] = w.shift_y;
            break;
    }
    return j;
}

WarpParams warp_from_json(const json& j) {
    WarpParams w;
    w.kind = kind_from_name(j.at("kind").get<std::string>());
    std::string pad = j.value("pad", "clamp");
    require(pad == "clamp" || pad == "circular", ErrorKind::load, "unknown warp pad: " + pad);
    w.pad = pad == "clamp" ? WarpPad::clamp : WarpPad::circular;
    switch (w.kind) {
        case WarpKind::identity: break;
        case WarpKind::translation:
            w.dx = j.at("dx").get<double>();
            w.dy = j.at("dy").get<double>();
            break;
        case WarpKind::homography: {
            auto hv = j.at("h").get<std::vector<double>>();
            require(hv.size() == 9, ErrorKind::load, "homography needs 9 entries");
            std::copy(hv.begin(), hv.end(), w.h);
            break;
        }
        case WarpKind::parallax:
            w.shift_x = j.at("shift_x").get<double>();
            w.shift_y = j.at("shift_y").get<double>();
            break;
    }
    validate_warp(w);
    return w;
}

void warp_source(const WarpParams& w, double x, double y, double depth_at, double* sx, double* sy) {
    switch (w.kind) {
        case WarpKind::identity:
            *sx = x;
            *sy = y;
            return;
        case WarpKind::translation:
            *sx = x - w.dx;
            *sy = y - w.dy;
            return;
        case WarpKind::homography: {
            double d = w.h[6] * x + w.h[7] * y + w.h[8];
            require(std::abs(d) > 1e-12, ErrorKind::degenerate, "homography denominator vanished");
            *sx = (w.h[0] * x + w.h[1] * y + w.h[2]) / d;
            *sy = (w.h[3] * x + w.h[4] * y + w.h[5]) / d;
            return;
        }
        case WarpKind::parallax:
            *sx = x - w.shift_x / depth_at;
            *sy = y - w.shift_y / depth_at;
            return;
    }
}

Warped apply_warp(const Tensor& img, const WarpParams& w, const Tensor* depth) {
    validate_warp(w);
    Warped out;
    out.mask = Tensor(1, 1, img.h, img.w);
    if (w.kind == WarpKind::identity) {
        out.img = img;
        out.mask.fill(1.0);
        return out;
    }
    if (w.kind == WarpKind::parallax) {
        require(depth != nullptr, ErrorKind::contract, "parallax warp needs a depth map");
        require(depth->n == 1 && depth->c == 1 && depth->h == img.h && depth->w == img.w,
                ErrorKind::shape, "depth must be [1,1,H,W] matching the image");
        for (double v : depth->v)
            require(v > 0.0, ErrorKind::contract, "depth must be strictly positive");
    }
    require(img.n == 1, ErrorKind::shape, "apply_warp takes single images");

    // integer translations are pure index remaps, no interpolation error
    bool int_shift = w.kind == WarpKind::translation && w.dx == std::floor(w.dx)
        && w.dy == std::floor(w.dy);
    out.img = Tensor(1, img.c, img.h, img.w);
    int hh = img.h, ww = img.w;

    parallel_for(size_t(hh), [&](size_t yi) {
        int y = int(yi);
        for (int x = 0; x < ww; ++x) {
            double sx, sy;
            double d = w.kind == WarpKind::parallax ? depth->at(0, 0, y, x) : 1.0;
            warp_source(w, double(x), double(y), d, &sx, &sy);
            bool inside = sx >= 0.0 && sx <= ww - 1 && sy >= 0.0 && sy <= hh - 1;
            out.mask.at(0, 0, y, x) = (w.pad == WarpPad::circular || inside) ? 1.0 : 0.0;
            if (int_shift) {
                int xs = int(sx), ys = int(sy);
                if (w.pad == WarpPad::circular) {
                    xs = wrap(xs, ww);
                    ys = wrap(ys, hh);
                } else {
                    xs = std::clamp(xs, 0, ww - 1);
                    ys = std::clamp(ys, 0, hh - 1);
                }
                for (int ci = 0; ci < img.c; ++ci)
                    out.img.at(0, ci, y, x) = img.at(0, ci, ys, xs);
                continue;
            }
            double fx = std::floor(sx), fy = std::floor(sy);
            int x0 = int(fx), y0 = int(fy);
            double ax = sx - fx, ay = sy - fy;
            int xs[2], ys[2];
            if (w.pad == WarpPad::circular) {
                xs[0] = wrap(x0, ww);
                xs[1] = wrap(x0 + 1, ww);
                ys[0] = wrap(y0, hh);
                ys[1] = wrap(y0 + 1, hh);
            } else {
                xs[0] = std::clamp(x0, 0, ww - 1);
                xs[1] = std::clamp(x0 + 1, 0, ww - 1);
                ys[0] = std::clamp(y0, 0, hh - 1);
                ys[1] = std::clamp(y0 + 1, 0, hh - 1);
            }
            for (int ci = 0; ci < img.c; ++ci) {
                double v00 = img.at(0, ci, ys[0], xs[0]);
                double v01 = img.at(0, ci, ys[0], xs[1]);
                double v10 = img.at(0, ci, ys[1], xs[0]);
                double v11 = img.at(0, ci, ys[1], xs[1]);
                double top = v00 * (1.0 - ax) + v01 * ax;
                double bot = v10 * (1.0 - ax) + v11 * ax;
                out.img.at(0, ci, y, x) = top * (1.0 - ay) + bot * ay;
            }
        }
    });
    return out;
}

CapturePair make_misaligned_pair(const FlashSceneSpec& spec, const WarpParams& w) {
    CapturePair p;
    p.no_flash = compose_no_flash(spec);
    Tensor flash_aligned = compose_flash(spec);
    Warped warped = apply_warp(flash_aligned, w, &spec.depth);
    p.flash = std::move(warped.img);
    p.flash_mask = std::move(warped.mask);
    p.misalignment = w;
    p.tonemapped = false;
    p.scene_seed = spec.seed;
    return p;
}

WarpParams random_misalignment(Rng& rng, double max_translation, double jitter_px, int size) {
    require(max_translation >= 0.0 && jitter_px >= 0.0, ErrorKind::config,
            "misalignment magnitudes must be non-negative");
    double m = rng.uniform(0.0, max_translation);
    double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double dx = m * std::cos(ang), dy = m * std::sin(ang);
    if (jitter_px <= 0.0) return translation_warp(dx, dy);

    double e = double(size - 1);
    double corners[4][2] = {{0, 0}, {e, 0}, {e, e}, {0, e}};
    double a[64] = {0};
    double b[8] = {0};
    for (int i = 0; i < 4; ++i) {
        double jx = rng.uniform(-jitter_px, jitter_px);
        double jy = rng.uniform(-jitter_px, jitter_px);
        double X = corners[i][0], Y = corners[i][1];
        double u = X - dx + jx, v = Y - dy + jy; // pull target
        double* r0 = a + (2 * i) * 8;
        r0[0] = X; r0[1] = Y; r0[2] = 1; r0[6] = -u * X; r0[7] = -u * Y;
        b[2 * i] = u;
        double* r1 = a + (2 * i + 1) * 8;
        r1[3] = X; r1[4] = Y; r1[5] = 1; r1[6] = -v * X; r1[7] = -v * Y;
        b[2 * i + 1] = v;
    }
    double hsol[8];
    solve8(a, b, hsol);
    double hm[9] = {hsol[0], hsol[1], hsol[2], hsol[3], hsol[4], hsol[5], hsol[6], hsol[7], 1.0};
    return homography_warp(hm);
}

} // namespace flashsplit
