#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flashsplit/core/error.hpp"
#include "flashsplit/eval/metrics.hpp"
#include "flashsplit/scene/scene.hpp"
#include "flashsplit/warp/registration.hpp"
#include "flashsplit/warp/warp.hpp"
#include "test_util.hpp"

using namespace flashsplit;

namespace {

Tensor textured(uint64_t seed, int c, int h, int w) {
    Rng rng(seed);
    Tensor t = randu(rng, 1, c, h, w);
    return gaussian_blur(t, 1.2);
}

int wrap(int v, int m) { return ((v % m) + m) % m; }

// adjugate-based 3x3 inverse, normalized so h[8] == 1
void invert_h(const double m[9], double out[9]) {
    double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7],
           i = m[8];
    double adj[9] = {e * i - f * h, c * h - b * i, b * f - c * e,
                     f * g - d * i, a * i - c * g, c * d - a * f,
                     d * h - e * g, b * g - a * h, a * e - b * d};
    double det = a * adj[0] + b * adj[3] + c * adj[6];
    for (int k = 0; k < 9; ++k) out[k] = adj[k] / det;
    for (int k = 0; k < 9; ++k) out[k] /= out[8] / 1.0;
    out[8] = 1.0;
}

} // namespace

TEST_CASE("identity warp returns a bit-exact copy with a full mask") {
    Tensor img = textured(60, 3, 18, 14);
    Warped w = apply_warp(img, WarpParams{});
    CHECK(max_abs_diff(w.img, img) == 0.0);
    for (double v : w.mask.v) CHECK(v == 1.0);
}

TEST_CASE("integer translation is an exact index remap") {
    Tensor img = textured(61, 2, 16, 16);
    int dx = 3, dy = -2;
    Warped w = apply_warp(img, translation_warp(dx, dy));
    for (int c = 0; c < img.c; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                int sx = x - dx, sy = y - dy;
                bool inside = sx >= 0 && sx < img.w && sy >= 0 && sy < img.h;
                CHECK(w.mask.at(0, 0, y, x) == (inside ? 1.0 : 0.0));
                if (inside) CHECK(w.img.at(0, c, y, x) == img.at(0, c, sy, sx));
            }
}

TEST_CASE("circular padding wraps integer shifts exactly") {
    Tensor img = textured(62, 1, 12, 10);
    int dx = -4, dy = 7;
    Warped w = apply_warp(img, translation_warp(dx, dy, WarpPad::circular));
    for (double v : w.mask.v) CHECK(v == 1.0);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            CHECK(w.img.at(0, 0, y, x) == img.at(0, 0, wrap(y - dy, img.h), wrap(x - dx, img.w)));
}

TEST_CASE("homography pull map inverts to the original coordinates") {
    double m[9] = {1.02, 0.015, -1.4, -0.01, 0.98, 2.1, 1e-4, -2e-4, 1.0};
    WarpParams w = homography_warp(m);
    double inv[9];
    invert_h(m, inv);
    WarpParams wi = homography_warp(inv);

    for (double x : {0.0, 3.7, 11.0, 15.0})
        for (double y : {0.0, 2.2, 9.5, 15.0}) {
            double sx, sy, bx, by;
            warp_source(w, x, y, 1.0, &sx, &sy);
            warp_source(wi, sx, sy, 1.0, &bx, &by);
            CHECK(std::abs(bx - x) < 1e-9);
            CHECK(std::abs(by - y) < 1e-9);
        }
}

TEST_CASE("parallax at constant depth equals a plain translation") {
    Tensor img = textured(63, 3, 20, 20);
    double d = 2.0, shift_x = 3.1, shift_y = -1.7;
    Tensor depth(1, 1, 20, 20);
    for (double& v : depth.v) v = d;

    Warped p = apply_warp(img, parallax_warp(shift_x, shift_y), &depth);
    Warped t = apply_warp(img, translation_warp(shift_x / d, shift_y / d));
    CHECK(max_abs_diff(p.img, t.img) == 0.0);
    CHECK(max_abs_diff(p.mask, t.mask) == 0.0);

    // nearer content moves farther
    Tensor near = depth, far = depth;
    for (double& v : near.v) v = 1.0;
    for (double& v : far.v) v = 4.0;
    double nx, ny, fx, fy;
    WarpParams pw = parallax_warp(shift_x, shift_y);
    warp_source(pw, 10.0, 10.0, 1.0, &nx, &ny);
    warp_source(pw, 10.0, 10.0, 4.0, &fx, &fy);
    CHECK(std::abs(10.0 - nx) > std::abs(10.0 - fx));
}

TEST_CASE("parallax without depth is rejected") {
    Tensor img = textured(64, 1, 16, 16);
    CHECK_THROWS_AS(apply_warp(img, parallax_warp(1.0, 0.0)), Error);
}

TEST_CASE("warp validation and json round trip") {
    double sing[9] = {1, 0, 0, 2, 0, 0, 0, 0, 1};
    CHECK_THROWS_AS(homography_warp(sing), Error);

    WarpParams id;
    id.dx = 0.5;
    CHECK_THROWS_AS(validate_warp(id), Error);

    double m[9] = {1.01, 0.0, -2.0, 0.02, 0.99, 1.0, 0.0, 1e-4, 1.0};
    for (const WarpParams& w : {translation_warp(1.5, -0.5, WarpPad::circular),
                                homography_warp(m), parallax_warp(0.3, 0.4), WarpParams{}}) {
        WarpParams back = warp_from_json(warp_to_json(w));
        CHECK(back.kind == w.kind);
        CHECK(warp_to_json(back).dump() == warp_to_json(w).dump());
    }
}

TEST_CASE("warp magnitude conventions") {
    CHECK(warp_magnitude(WarpParams{}, 16) == 0.0);
    CHECK(warp_magnitude(translation_warp(3.0, 4.0), 16) == 5.0);
    double m[9] = {1, 0, -2.0, 0, 1, 0, 0, 0, 1}; // pure pull shift of +2 in x
    CHECK(warp_magnitude(homography_warp(m), 16) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("phase correlation recovers integer circular shifts exactly") {
    Tensor img = textured(65, 3, 32, 32);
    for (auto [dx, dy] : {std::pair{5, -3}, {-7, 2}, {0, 9}}) {
        Warped b = apply_warp(img, translation_warp(dx, dy, WarpPad::circular));
        TranslationEstimate e = estimate_translation(img, b.img);
        CHECK(e.dx == doctest::Approx(double(dx)).epsilon(1e-6));
        CHECK(e.dy == doctest::Approx(double(dy)).epsilon(1e-6));
        CHECK(e.response > 0.1);
    }
}

TEST_CASE("phase correlation resolves subpixel shifts") {
    Tensor img = textured(66, 1, 48, 48);
    Warped b = apply_warp(img, translation_warp(2.5, -1.25, WarpPad::circular));
    TranslationEstimate e = estimate_translation(img, b.img);
    // parabolic refinement keeps the estimate within a quarter pixel
    CHECK(std::abs(e.dx - 2.5) < 0.25);
    CHECK(std::abs(e.dy + 1.25) < 0.25);
}

TEST_CASE("phase correlation rejects near-constant images") {
    Tensor flat(1, 1, 16, 16);
    for (double& v : flat.v) v = 0.25;
    try {
        estimate_translation(flat, flat);
        FAIL("expected a typed error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::degenerate);
    }
}

TEST_CASE("misaligned pair keeps the no-flash capture aligned") {
    SceneConfig cfg;
    cfg.size = 32;
    FlashSceneSpec s = generate_scene(12, cfg);
    WarpParams w = translation_warp(4.0, -3.0);
    CapturePair p = make_misaligned_pair(s, w);
    CHECK(max_abs_diff(p.no_flash, compose_no_flash(s)) == 0.0);
    Warped moved = apply_warp(compose_flash(s), w);
    CHECK(max_abs_diff(p.flash, moved.img) == 0.0);
    CHECK(max_abs_diff(p.flash_mask, moved.mask) == 0.0);
    CHECK(p.scene_seed == s.seed);
}

TEST_CASE("prealignment on an aligned pair reduces to the plain difference") {
    SceneConfig cfg;
    cfg.size = 48;
    FlashSceneSpec s = generate_scene(13, cfg);
    CapturePair p = make_misaligned_pair(s, WarpParams{});
    PrealignResult r = baseline_prealign_difference(p);
    CHECK(std::hypot(r.estimate.dx, r.estimate.dy) < 0.05);
    double acc = 0.0;
    Tensor naive = flash_difference(p);
    for (size_t i = 0; i < naive.size(); ++i) acc += std::abs(r.diff.v[i] - naive.v[i]);
    CHECK(acc / double(naive.size()) < 1e-3);
}

TEST_CASE("prealignment beats the naive difference under translation") {
    SceneConfig cfg;
    cfg.size = 48;
    FlashSceneSpec s = generate_scene(14, cfg);
    CapturePair p = make_misaligned_pair(s, translation_warp(4.3, -2.1));
    Tensor gt = flash_term(s);

    PrealignResult r = baseline_prealign_difference(p);
    double pre = psnr(r.diff, gt, 1.0, &r.mask);
    double naive = psnr(flash_difference(p), gt);
    CHECK(pre > naive + 5.0);
    CHECK(std::abs(r.estimate.dx - 4.3) < 0.3);
    CHECK(std::abs(r.estimate.dy + 2.1) < 0.3);
}
