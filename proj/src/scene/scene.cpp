#include "flashsplit/scene/scene.hpp"

#include <algorithm>
#include <cmath>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/font.hpp"
#include "flashsplit/eval/metrics.hpp"

namespace flashsplit {

namespace {

constexpr double kPi = 3.14159265358979323846;

// smooth field in [0,1]: ramp plus two sinusoids, fixed draw order
Tensor smooth_field01(Rng& rng, int size) {
    Tensor f(1, 1, size, size);
    double ang = rng.uniform(0.0, 2.0 * kPi);
    double ramp_w = rng.uniform(0.3, 1.0);
    double fr1 = rng.uniform(0.5, 2.0), ph1 = rng.uniform(0.0, 2.0 * kPi), an1 = rng.uniform(0.0, 2.0 * kPi);
    double fr2 = rng.uniform(1.0, 3.0), ph2 = rng.uniform(0.0, 2.0 * kPi), an2 = rng.uniform(0.0, 2.0 * kPi);
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double u = (x * std::cos(ang) + y * std::sin(ang)) / size;
            double v = ramp_w * u
                + 0.6 * std::sin(2.0 * kPi * fr1 * (x * std::cos(an1) + y * std::sin(an1)) / size + ph1)
                + 0.3 * std::sin(2.0 * kPi * fr2 * (x * std::cos(an2) + y * std::sin(an2)) / size + ph2);
            f.at(0, 0, y, x) = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    double span = hi - lo;
    if (span < 1e-12) span = 1.0;
    for (double& v : f.v) v = (v - lo) / span;
    return f;
}

void fill_background(Rng& rng, Tensor& img) {
    double ang = rng.uniform(0.0, 2.0 * kPi);
    for (int ci = 0; ci < img.c; ++ci) {
        double b0 = rng.uniform(0.05, 0.3), b1 = rng.uniform(0.05, 0.3);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double u = 0.5 + 0.5 * (x * std::cos(ang) + y * std::sin(ang)) / img.w;
                u = std::clamp(u, 0.0, 1.0);
                img.at(0, ci, y, x) = b0 + (b1 - b0) * u;
            }
    }
}

Tensor texture_gradients(Rng& rng, int size, int channels) {
    Tensor img(1, channels, size, size);
    int waves = 2 + rng.uniform_int(0, 2);
    for (int wi = 0; wi < waves; ++wi) {
        double amp = rng.uniform(0.2, 1.0);
        double fr = rng.uniform(0.5, 2.5);
        double ph = rng.uniform(0.0, 2.0 * kPi);
        double an = rng.uniform(0.0, 2.0 * kPi);
        std::vector<double> col(static_cast<size_t>(channels));
        for (double& cv : col) cv = rng.uniform(0.3, 1.0);
        for (int ci = 0; ci < channels; ++ci)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double s = std::sin(2.0 * kPi * fr * (x * std::cos(an) + y * std::sin(an)) / size + ph);
                    img.at(0, ci, y, x) += amp * col[size_t(ci)] * (0.5 + 0.5 * s);
                }
    }
    return img;
}

Tensor texture_shapes(Rng& rng, int size, int channels) {
    Tensor img(1, channels, size, size);
    fill_background(rng, img);
    int count = rng.uniform_int(3, 6);
    for (int k = 0; k < count; ++k) {
        bool disk = rng.uniform() < 0.5;
        double cx = rng.uniform(0.0, double(size - 1));
        double cy = rng.uniform(0.0, double(size - 1));
        double rx = rng.uniform(size / 10.0, size / 3.0);
        double ry = rng.uniform(size / 10.0, size / 3.0);
        std::vector<double> col(static_cast<size_t>(channels));
        for (double& cv : col) cv = rng.uniform(0.1, 1.0);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double ux = (x - cx) / rx, uy = (y - cy) / ry;
                bool inside = disk ? (ux * ux + uy * uy <= 1.0)
                                   : (std::abs(ux) <= 1.0 && std::abs(uy) <= 1.0);
                if (inside)
                    for (int ci = 0; ci < channels; ++ci) img.at(0, ci, y, x) = col[size_t(ci)];
            }
    }
    return img;
}

Tensor texture_glyphs(Rng& rng, int size, int channels) {
    static const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    Tensor img(1, channels, size, size);
    fill_background(rng, img);
    int count = rng.uniform_int(4, 8);
    for (int k = 0; k < count; ++k) {
        char ch = alphabet[rng.uniform_int(0, 35)];
        int scale = rng.uniform_int(2, std::max(2, size / 16));
        int px = rng.uniform_int(0, std::max(0, size - kGlyphW * scale));
        int py = rng.uniform_int(0, std::max(0, size - kGlyphH * scale));
        std::vector<double> col(static_cast<size_t>(channels));
        for (double& cv : col) cv = rng.uniform(0.2, 1.0);
        const uint8_t* rows = glyph5x7(ch);
        if (!rows) continue;
        for (int gy = 0; gy < kGlyphH; ++gy)
            for (int gx = 0; gx < kGlyphW; ++gx) {
                if (!((rows[gy] >> (kGlyphW - 1 - gx)) & 1)) continue;
                for (int sy = 0; sy < scale; ++sy)
                    for (int sx = 0; sx < scale; ++sx) {
                        int y = py + gy * scale + sy, x = px + gx * scale + sx;
                        if (y >= size || x >= size) continue;
                        for (int ci = 0; ci < channels; ++ci) img.at(0, ci, y, x) = col[size_t(ci)];
                    }
            }
    }
    return img;
}

Tensor make_layer(Rng& rng, const SceneConfig& cfg, double extra_blur) {
    int fam = rng.uniform_int(0, int(cfg.textures.size()) - 1);
    const std::string& name = cfg.textures[size_t(fam)];
    Tensor img;
    if (name == "gradients") img = texture_gradients(rng, cfg.size, cfg.channels);
    else if (name == "shapes") img = texture_shapes(rng, cfg.size, cfg.channels);
    else img = texture_glyphs(rng, cfg.size, cfg.channels);
    img = gaussian_blur(img, cfg.blur_sigma * extra_blur);
    double peak = 0.0;
    for (double v : img.v) peak = std::max(peak, v);
    double bright = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
    double s = peak > 1e-12 ? bright / peak : 0.0;
    if (s == 0.0) img.fill(bright * 0.5);
    else for (double& v : img.v) v *= s;
    return img;
}

// value at (y,x) of a scalar-or-map parameter
inline double param_at(const Tensor& p, int y, int x) {
    return p.h == 1 && p.w == 1 ? p.v[0] : p.at(0, 0, y, x);
}

} // namespace

void validate_scene_config(const SceneConfig& cfg) {
    require(cfg.size >= 16, ErrorKind::config, "scene size must be at least 16");
    require(cfg.channels == 1 || cfg.channels == 3, ErrorKind::config, "scene channels must be 1 or 3");
    require(!cfg.textures.empty(), ErrorKind::config, "scene texture list is empty");
    for (const auto& t : cfg.textures)
        require(t == "gradients" || t == "shapes" || t == "glyphs", ErrorKind::config,
                "unknown texture family: " + t);
    require(cfg.gamma_lo >= 0.0 && cfg.gamma_hi <= 1.0 && cfg.gamma_lo <= cfg.gamma_hi,
            ErrorKind::config, "gamma range must satisfy 0 <= lo <= hi <= 1");
    require(cfg.theta_lo > 0.0 && cfg.theta_lo <= cfg.theta_hi, ErrorKind::config,
            "theta range must satisfy 0 < lo <= hi");
    require(cfg.brightness_lo > 0.0 && cfg.brightness_lo <= cfg.brightness_hi && cfg.brightness_hi <= 1.0,
            ErrorKind::config, "brightness range must satisfy 0 < lo <= hi <= 1");
    require(cfg.depth_lo > 0.0 && cfg.depth_lo <= cfg.depth_hi, ErrorKind::config,
            "depth range must satisfy 0 < lo <= hi");
    require(cfg.blur_sigma >= 0.0, ErrorKind::config, "blur sigma must be non-negative");
}

Tensor gaussian_blur(const Tensor& img, double sigma) {
    if (sigma <= 0.0) return img;
    int half = int(std::ceil(3.0 * sigma));
    std::vector<double> taps = gaussian_taps(2 * half + 1, sigma);
    auto reflect = [](int i, int n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
        return std::clamp(i, 0, n - 1);
    };
    Tensor tmp = img, out = img;
    for (int ni = 0; ni < img.n; ++ni)
        for (int ci = 0; ci < img.c; ++ci) {
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    double acc = 0.0;
                    for (int k = -half; k <= half; ++k)
                        acc += taps[size_t(k + half)] * img.at(ni, ci, y, reflect(x + k, img.w));
                    tmp.at(ni, ci, y, x) = acc;
                }
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    double acc = 0.0;
                    for (int k = -half; k <= half; ++k)
                        acc += taps[size_t(k + half)] * tmp.at(ni, ci, reflect(y + k, img.h), x);
                    out.at(ni, ci, y, x) = acc;
                }
        }
    return out;
}

FlashSceneSpec generate_scene(uint64_t seed, const SceneConfig& cfg) {
    validate_scene_config(cfg);
    Rng root(seed);
    Rng rt = root.child(1), rr = root.child(2), rp = root.child(3), rd = root.child(4);

    FlashSceneSpec s;
    s.seed = seed;
    s.transmission = make_layer(rt, cfg, 1.0);
    s.reflection = make_layer(rr, cfg, 2.0); // reflections render softer

    Tensor dfield = smooth_field01(rd, cfg.size);
    s.depth = Tensor(1, 1, cfg.size, cfg.size);
    for (size_t i = 0; i < s.depth.size(); ++i)
        s.depth.v[i] = cfg.depth_lo + (cfg.depth_hi - cfg.depth_lo) * dfield.v[i];

    if (cfg.per_pixel_gamma) {
        Tensor gfield = smooth_field01(rp, cfg.size);
        s.gamma = Tensor(1, 1, cfg.size, cfg.size);
        for (size_t i = 0; i < s.gamma.size(); ++i)
            s.gamma.v[i] = cfg.gamma_lo + (cfg.gamma_hi - cfg.gamma_lo) * gfield.v[i];
    } else {
        s.gamma = Tensor(1, 1, 1, 1);
        s.gamma.v[0] = rp.uniform(cfg.gamma_lo, cfg.gamma_hi);
    }

    double theta0 = rp.uniform(cfg.theta_lo, cfg.theta_hi);
    if (cfg.flash_falloff) {
        s.theta = Tensor(1, 1, cfg.size, cfg.size);
        double cx = (cfg.size - 1) / 2.0, cy = (cfg.size - 1) / 2.0;
        double rmax2 = cx * cx + cy * cy;
        for (int y = 0; y < cfg.size; ++y)
            for (int x = 0; x < cfg.size; ++x) {
                double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / rmax2;
                s.theta.at(0, 0, y, x) = theta0 * (1.0 - 0.5 * r2);
            }
    } else {
        s.theta = Tensor(1, 1, 1, 1);
        s.theta.v[0] = theta0;
    }

    validate_scene(s);
    return s;
}

void validate_scene(const FlashSceneSpec& s) {
    require(s.transmission.same_shape(s.reflection), ErrorKind::shape,
            "scene layers must share one shape");
    require(s.transmission.n == 1, ErrorKind::shape, "scene layers are single images");
    int hh = s.transmission.h, ww = s.transmission.w;
    require(s.depth.n == 1 && s.depth.c == 1 && s.depth.h == hh && s.depth.w == ww,
            ErrorKind::shape, "depth must be [1,1,H,W]");
    auto check_param = [&](const Tensor& p, const char* name) {
        bool scalar = p.n == 1 && p.c == 1 && p.h == 1 && p.w == 1;
        bool map = p.n == 1 && p.c == 1 && p.h == hh && p.w == ww;
        require(scalar || map, ErrorKind::shape, std::string(name) + " must be scalar or [1,1,H,W]");
    };
    check_param(s.gamma, "gamma");
    check_param(s.theta, "theta");
    for (double v : s.transmission.v)
        require(std::isfinite(v) && v >= 0.0, ErrorKind::contract, "transmission must be finite and non-negative");
    for (double v : s.reflection.v)
        require(std::isfinite(v) && v >= 0.0, ErrorKind::contract, "reflection must be finite and non-negative");
    for (double v : s.depth.v)
        require(std::isfinite(v) && v > 0.0, ErrorKind::contract, "depth must be strictly positive");
    for (double v : s.gamma.v)
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorKind::contract, "gamma must lie in [0,1]");
    for (double v : s.theta.v)
        require(std::isfinite(v) && v > 0.0, ErrorKind::contract, "theta must be strictly positive");
}

Tensor compose_no_flash(const FlashSceneSpec& s) {
    Tensor out = s.transmission;
    for (int ci = 0; ci < out.c; ++ci)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(0, ci, y, x) = s.transmission.at(0, ci, y, x)
                    + param_at(s.gamma, y, x) * s.reflection.at(0, ci, y, x);
    return out;
}

Tensor compose_flash(const FlashSceneSpec& s) {
    Tensor out = s.transmission;
    for (int ci = 0; ci < out.c; ++ci)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(0, ci, y, x) = (1.0 + param_at(s.theta, y, x)) * s.transmission.at(0, ci, y, x)
                    + param_at(s.gamma, y, x) * s.reflection.at(0, ci, y, x);
    return out;
}

Tensor flash_term(const FlashSceneSpec& s) {
    Tensor out = s.transmission;
    for (int ci = 0; ci < out.c; ++ci)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(0, ci, y, x) = param_at(s.theta, y, x) * s.transmission.at(0, ci, y, x);
    return out;
}

Tensor flash_difference(const CapturePair& p) {
    require(!p.tonemapped, ErrorKind::mode,
            "flash_difference needs linear radiance, got a tonemapped pair");
    require(p.flash.same_shape(p.no_flash), ErrorKind::shape,
            "capture pair images must share one shape");
    Tensor out = p.flash;
    for (size_t i = 0; i < out.size(); ++i)
        out.v[i] = std::max(p.flash.v[i] - p.no_flash.v[i], 0.0);
    return out;
}

Tensor tonemap(const Tensor& linear) {
    Tensor out = linear;
    for (double& v : out.v) v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / 2.2);
    return out;
}

Tensor untonemap(const Tensor& display) {
    Tensor out = display;
    for (double& v : out.v) v = std::pow(std::clamp(v, 0.0, 1.0), 2.2);
    return out;
}

} // namespace flashsplit
