#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flashsplit/core/error.hpp"
#include "flashsplit/diffusion/denoiser.hpp"
#include "flashsplit/diffusion/noise.hpp"
#include "flashsplit/diffusion/schedule.hpp"
#include "flashsplit/scene/scene.hpp"
#include "flashsplit/train/losses.hpp"
#include "test_util.hpp"

using namespace flashsplit;

namespace {

template <class F> ErrorKind kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected a typed error");
    return ErrorKind::io;
}

// noise the forward process would have needed to land on s_t from s0
Tensor oracle_eps(const Tensor& s_t, const Tensor& s0, int t, const NoiseSchedule& sched) {
    double ab = sched.alpha_bar(t);
    Tensor eps = s_t;
    for (size_t i = 0; i < eps.size(); ++i)
        eps.v[i] = (s_t.v[i] - std::sqrt(ab) * s0.v[i]) / std::sqrt(1.0 - ab);
    return eps;
}

Tensor row_of(const Tensor& t, int n) {
    Tensor out(1, t.c, t.h, t.w);
    size_t plane = t.size() / size_t(t.n);
    for (size_t i = 0; i < plane; ++i) out.v[i] = t.v[size_t(n) * plane + i];
    return out;
}

double lag1_autocorr(const Tensor& t) {
    double num = 0.0, den = 0.0;
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x + 1 < t.w; ++x) {
            num += t.at(0, 0, y, x) * t.at(0, 0, y, x + 1);
            den += t.at(0, 0, y, x) * t.at(0, 0, y, x);
        }
    return num / den;
}

DenoiserConfig tiny_denoiser_cfg() {
    DenoiserConfig cfg;
    cfg.width = 4;
    cfg.latent_channels = 2;
    return cfg;
}

CodecConfig tiny_codec_cfg() {
    CodecConfig cfg;
    cfg.width = 4;
    cfg.latent_channels = 2;
    return cfg;
}

} // namespace

TEST_CASE("schedule closed forms") {
    NoiseSchedule one = build_schedule(1, 0.5, 0.5);
    CHECK(one.betas.size() == 1);
    CHECK(one.betas[0] == 0.5);
    CHECK(one.alpha_bar(1) == 0.5);
    CHECK(one.alpha_bar(0) == 1.0);

    NoiseSchedule lin = build_schedule(1000, 1e-4, 0.02);
    CHECK(lin.betas.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lin.betas.back() == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(lin.betas[499] == doctest::Approx(1e-4 + (0.02 - 1e-4) * 499.0 / 999.0).epsilon(1e-12));
    for (int t = 1; t <= 1000; ++t) {
        CHECK(lin.alpha_bar(t) < lin.alpha_bar(t - 1));
        CHECK(lin.alpha_bar(t) > 0.0);
    }

    NoiseSchedule sc = build_schedule(100, 1e-4, 0.02, "scaled_linear");
    double root = std::sqrt(1e-4) + (std::sqrt(0.02) - std::sqrt(1e-4)) * 37.0 / 99.0;
    CHECK(sc.betas[37] == doctest::Approx(root * root).epsilon(1e-12));

    CHECK(kind_of([] { build_schedule(0, 1e-4, 0.02); }) == ErrorKind::config);
    CHECK(kind_of([] { build_schedule(10, 0.0, 0.02); }) == ErrorKind::config);
    CHECK(kind_of([] { build_schedule(10, 0.03, 0.02); }) == ErrorKind::config);
    CHECK(kind_of([] { build_schedule(10, 1e-4, 0.02, "cubic"); }) == ErrorKind::config);
}

TEST_CASE("forward diffusion matches its closed form") {
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    Rng rng(80);
    Tensor s0 = randn(rng, 1, 2, 6, 6);
    Tensor eps = randn(rng, 1, 2, 6, 6);
    for (int t : {1, 250, 1000}) {
        Tensor st = forward_diffuse(s0, eps, t, sched);
        double a = std::sqrt(sched.alpha_bar(t)), b = std::sqrt(1.0 - sched.alpha_bar(t));
        for (size_t i = 0; i < st.size(); ++i)
            CHECK(st.v[i] == doctest::Approx(a * s0.v[i] + b * eps.v[i]).epsilon(1e-15));
    }
    CHECK_THROWS_AS(forward_diffuse(s0, eps, 0, sched), Error);
    CHECK_THROWS_AS(forward_diffuse(s0, eps, 1001, sched), Error);
}

TEST_CASE("ddim with the oracle denoiser inverts the forward process") {
    NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
    Rng rng(81);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor s0 = randn(rng, 1, 2, 8, 8);
        Tensor eps = randn(rng, 1, 2, 8, 8);
        Tensor s_T = forward_diffuse(s0, eps, 1000, sched);

        Tensor direct = ddim_step(s_T, oracle_eps(s_T, s0, 1000, sched), 1000, 0, sched);
        CHECK(max_abs_diff(direct, s0) < 1e-12);

        std::vector<int> grid = ddim_grid(1000, 50);
        Tensor s = s_T;
        for (size_t i = 0; i + 1 < grid.size(); ++i)
            s = ddim_step(s, oracle_eps(s, s0, grid[i], sched), grid[i], grid[i + 1], sched);
        CHECK(max_abs_diff(s, s0) < 1e-9);
        CHECK(max_abs_diff(s, direct) < 1e-9);
    }
}

TEST_CASE("ddim inference grid spans the schedule and ends at zero") {
    std::vector<int> g = ddim_grid(1000, 50);
    CHECK(g.size() == 51);
    CHECK(g.front() == 1000);
    CHECK(g.back() == 0);
    CHECK(g[1] == 980);
    for (size_t i = 1; i < g.size(); ++i) CHECK(g[i] < g[i - 1]);

    std::vector<int> full = ddim_grid(10, 10);
    CHECK(full == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0});

    CHECK(kind_of([] { ddim_grid(10, 11); }) == ErrorKind::config);
    CHECK(kind_of([] { ddim_grid(10, 0); }) == ErrorKind::config);
}

TEST_CASE("multires noise keeps zero mean and unit variance") {
    MultiResNoiseConfig cfg;
    Rng rng(82);
    for (double progress : {0.0, 0.5, 1.0}) {
        double sum = 0.0, sq = 0.0;
        int reps = 200, elems = 0;
        for (int r = 0; r < reps; ++r) {
            Tensor n = sample_multires_noise(1, 1, 32, 32, cfg, progress, rng);
            for (double v : n.v) {
                sum += v;
                sq += v * v;
            }
            elems += int(n.size());
        }
        double mean = sum / elems;
        double var = sq / elems - mean * mean;
        CHECK(std::abs(mean) < 0.02);
        CHECK(std::abs(var - 1.0) < 0.05);
    }
}

TEST_CASE("noise anneal moves from correlated to white") {
    MultiResNoiseConfig cfg;
    Rng rng(83);
    double early = 0.0, late = 0.0;
    for (int r = 0; r < 50; ++r) {
        early += lag1_autocorr(sample_multires_noise(1, 1, 32, 32, cfg, 0.0, rng));
        late += lag1_autocorr(sample_multires_noise(1, 1, 32, 32, cfg, 1.0, rng));
    }
    early /= 50.0;
    late /= 50.0;
    CHECK(early > 0.2);
    CHECK(std::abs(late) < 0.05);
}

TEST_CASE("noise sampling is deterministic and validates its config") {
    MultiResNoiseConfig cfg;
    Rng a(84), b(84);
    Tensor na = sample_multires_noise(2, 3, 16, 16, cfg, 0.3, a);
    Tensor nb = sample_multires_noise(2, 3, 16, 16, cfg, 0.3, b);
    CHECK(max_abs_diff(na, nb) == 0.0);

    Rng c(85);
    CHECK(kind_of([&] { sample_multires_noise(1, 1, 30, 30, cfg, 0.0, c); }) == ErrorKind::config);
    CHECK(kind_of([&] { sample_multires_noise(1, 1, 16, 16, cfg, 1.5, c); }) == ErrorKind::contract);

    MultiResNoiseConfig bad;
    bad.scales = {1, 3};
    CHECK(kind_of([&] { validate_noise_config(bad); }) == ErrorKind::config);
    bad.scales = {2, 4};
    CHECK(kind_of([&] { validate_noise_config(bad); }) == ErrorKind::config);
    bad.scales = {1, 2};
    bad.anneal = 1.5;
    CHECK(kind_of([&] { validate_noise_config(bad); }) == ErrorKind::config);
}

TEST_CASE("timestep features are bounded, even-dimensional and deterministic") {
    Tensor f = timestep_features({0, 1, 500, 999}, 8);
    CHECK(f.n == 4);
    CHECK(f.c == 8);
    CHECK(f.h == 1);
    CHECK(f.w == 1);
    for (double v : f.v) CHECK((v >= -1.0 && v <= 1.0));

    Tensor again = timestep_features({0, 1, 500, 999}, 8);
    CHECK(max_abs_diff(f, again) == 0.0);
    CHECK(max_abs_diff(row_of(f, 1), row_of(f, 2)) > 1e-6);

    CHECK_THROWS_AS(timestep_features({1}, 7), Error);
}

TEST_CASE("fresh cross-attention contributes exactly nothing") {
    DualDenoiserState st = denoiser_init(tiny_denoiser_cfg(), 11);
    Rng rng(86);
    Tensor nt = randn(rng, 2, 2, 8, 8), nr = randn(rng, 2, 2, 8, 8);
    Tensor zf = randn(rng, 2, 2, 8, 8), zn = randn(rng, 2, 2, 8, 8);
    std::vector<int> ts = {999, 500};

    auto on = denoiser_forward(st, nt, nr, zf, zn, ts, true);
    auto off = denoiser_forward(st, nt, nr, zf, zn, ts, false);
    CHECK(max_abs_diff(on.first, off.first) == 0.0);
    CHECK(max_abs_diff(on.second, off.second) == 0.0);

    // once both zero projections move, the branches talk
    Rng pr(87);
    for (const char* name : {"t.ca.q.w", "t.ca.o.w"}) {
        Tensor& w = st.params.value(name);
        for (double& v : w.v) v = 0.02 * pr.normal();
    }
    auto on2 = denoiser_forward(st, nt, nr, zf, zn, ts, true);
    auto off2 = denoiser_forward(st, nt, nr, zf, zn, ts, false);
    CHECK(max_abs_diff(on2.first, off2.first) > 0.0);
}

TEST_CASE("denoiser rows are independent across the batch") {
    DualDenoiserState st = denoiser_init(tiny_denoiser_cfg(), 12);
    Rng rng(88);
    Tensor nt = randn(rng, 3, 2, 8, 8), nr = randn(rng, 3, 2, 8, 8);
    Tensor zf = randn(rng, 3, 2, 8, 8), zn = randn(rng, 3, 2, 8, 8);
    std::vector<int> ts = {999, 400, 10};

    auto batch = denoiser_forward(st, nt, nr, zf, zn, ts);
    for (int i = 0; i < 3; ++i) {
        auto single = denoiser_forward(st, row_of(nt, i), row_of(nr, i), row_of(zf, i),
                                       row_of(zn, i), {ts[size_t(i)]});
        CHECK(max_abs_diff(row_of(batch.first, i), single.first) == 0.0);
        CHECK(max_abs_diff(row_of(batch.second, i), single.second) == 0.0);
    }
}

TEST_CASE("denoiser gradients match finite differences") {
    DualDenoiserState st = denoiser_init(tiny_denoiser_cfg(), 13);
    Rng pr(89);
    for (const char* name : {"t.ca.q.w", "t.ca.o.w", "r.ca.q.w", "r.ca.o.w"}) {
        Tensor& w = st.params.value(name);
        for (double& v : w.v) v = 0.05 * pr.normal();
    }

    Rng rng(90);
    Tensor nt = randn(rng, 1, 2, 8, 8), nr = randn(rng, 1, 2, 8, 8);
    Tensor zf = randn(rng, 1, 2, 8, 8), zn = randn(rng, 1, 2, 8, 8);
    Tensor tf = timestep_features({321}, 4);

    auto build = [&](Bind& b) {
        DenoiserOut out = denoiser_graph(b, st, b.g.input(nt), b.g.input(nr), b.g.input(zf),
                                         b.g.input(zn), b.g.input(tf));
        return b.g.add(mean_sq(b.g, out.eps_t), mean_sq(b.g, out.eps_r));
    };
    CHECK(fd_max_rel_err(st.params, build,
                         {"t.in.w", "t.rb2.c1.w", "t.ca.o.w", "t.sa.q.w", "r.out.c.w", "emb.m0.w"},
                         4, 91)
          < 1e-3);
}

TEST_CASE("denoiser checkpoints preserve flags and weights") {
    DualDenoiserState st = denoiser_init(tiny_denoiser_cfg(), 14);
    st.trained = true;
    st.single_image = true;
    st.tonemapped = true;
    std::string path = (std::filesystem::temp_directory_path() / "fs_stage1.fsc").string();
    save_denoiser(path, st, json::object());
    DualDenoiserState back = load_denoiser(path);
    CHECK(back.trained);
    CHECK(back.single_image);
    CHECK(back.tonemapped);
    for (const auto& [name, t] : st.params.values)
        CHECK(max_abs_diff(t, back.params.values.at(name)) == 0.0);
}

TEST_CASE("separation is seeded, batched and mode-checked") {
    CodecState codec = codec_init(tiny_codec_cfg(), 15);
    codec.trained = true;
    DualDenoiserState st = denoiser_init(tiny_denoiser_cfg(), 16);
    st.trained = true;

    SceneConfig scfg;
    scfg.size = 16;
    FlashSceneSpec s1 = generate_scene(21, scfg), s2 = generate_scene(22, scfg);
    CapturePair p1, p2;
    p1.no_flash = compose_no_flash(s1);
    p1.flash = compose_flash(s1);
    p2.no_flash = compose_no_flash(s2);
    p2.flash = compose_flash(s2);

    SeparatedLatents both = separate(st, codec, {&p1, &p2}, 6, {101, 202});
    SeparatedLatents only1 = separate(st, codec, {&p1}, 6, {101});
    SeparatedLatents only2 = separate(st, codec, {&p2}, 6, {202});
    CHECK(max_abs_diff(row_of(both.lat_t, 0), only1.lat_t) == 0.0);
    CHECK(max_abs_diff(row_of(both.lat_r, 0), only1.lat_r) == 0.0);
    CHECK(max_abs_diff(row_of(both.lat_t, 1), only2.lat_t) == 0.0);

    SeparatedLatents again = separate(st, codec, {&p1, &p2}, 6, {101, 202});
    CHECK(max_abs_diff(both.lat_t, again.lat_t) == 0.0);
    CHECK(max_abs_diff(both.lat_r, again.lat_r) == 0.0);

    SeparatedLatents reseeded = separate(st, codec, {&p1}, 6, {103});
    CHECK(max_abs_diff(reseeded.lat_t, only1.lat_t) > 0.0);

    DualDenoiserState raw = denoiser_init(tiny_denoiser_cfg(), 16);
    CHECK(kind_of([&] { separate(raw, codec, {&p1}, 6, {1}); }) == ErrorKind::usage);

    CapturePair tm = p1;
    tm.tonemapped = true;
    CHECK(kind_of([&] { separate(st, codec, {&tm}, 6, {1}); }) == ErrorKind::mode);
}
