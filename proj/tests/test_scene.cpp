#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <map>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/hash.hpp"
#include "flashsplit/scene/dataset.hpp"
#include "flashsplit/scene/scene.hpp"
#include "test_util.hpp"

using namespace flashsplit;
namespace fs = std::filesystem;

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

double broadcast_at(const Tensor& p, int y, int x) {
    return p.size() == 1 ? p.v[0] : p.at(0, 0, y, x);
}

std::string tmp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("fs_scene_") + tag);
    fs::remove_all(p);
    return p.string();
}

// relative path -> content hash for every regular file under root
std::map<std::string, uint64_t> dir_hashes(const std::string& root) {
    std::map<std::string, uint64_t> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = hash_file(e.path().string());
    return out;
}

} // namespace

TEST_CASE("composites follow the flash model pixel by pixel") {
    SceneConfig base;
    base.size = 32;
    std::vector<SceneConfig> variants(4, base);
    variants[1].per_pixel_gamma = true;
    variants[2].flash_falloff = true;
    variants[3].per_pixel_gamma = true;
    variants[3].flash_falloff = true;
    variants[3].channels = 1;

    double worst = 0.0;
    for (int vi = 0; vi < int(variants.size()); ++vi) {
        const SceneConfig& cfg = variants[size_t(vi)];
        for (uint64_t seed = 1; seed <= 8; ++seed) {
            FlashSceneSpec s = generate_scene(seed * 31 + uint64_t(vi), cfg);
            validate_scene(s);
            Tensor nf = compose_no_flash(s), fl = compose_flash(s), ft = flash_term(s);
            for (int c = 0; c < s.transmission.c; ++c)
                for (int y = 0; y < cfg.size; ++y)
                    for (int x = 0; x < cfg.size; ++x) {
                        double t = s.transmission.at(0, c, y, x);
                        double r = s.reflection.at(0, c, y, x);
                        double g = broadcast_at(s.gamma, y, x);
                        double th = broadcast_at(s.theta, y, x);
                        worst = std::max(worst, std::abs(nf.at(0, c, y, x) - (t + g * r)));
                        worst = std::max(worst,
                                         std::abs(fl.at(0, c, y, x) - ((1.0 + th) * t + g * r)));
                        worst = std::max(worst, std::abs(ft.at(0, c, y, x) - th * t));
                        CHECK(fl.at(0, c, y, x) >= nf.at(0, c, y, x));
                    }
        }
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("generated parameters stay inside their configured ranges") {
    SceneConfig cfg;
    cfg.size = 32;
    cfg.per_pixel_gamma = true;
    for (uint64_t seed : {3u, 9u, 27u}) {
        FlashSceneSpec s = generate_scene(seed, cfg);
        for (double v : s.gamma.v) CHECK((v >= cfg.gamma_lo - 1e-12 && v <= cfg.gamma_hi + 1e-12));
        for (double v : s.theta.v) CHECK((v > 0.0 && v <= cfg.theta_hi + 1e-12));
        for (double v : s.depth.v) CHECK((v >= cfg.depth_lo - 1e-12 && v <= cfg.depth_hi + 1e-12));
        double peak = 0.0;
        for (double v : s.transmission.v) peak = std::max(peak, v);
        CHECK(peak <= cfg.brightness_hi + 1e-9);
        CHECK(peak > 0.1);
    }
}

TEST_CASE("scene generation is deterministic in the seed") {
    SceneConfig cfg;
    cfg.size = 24;
    FlashSceneSpec a = generate_scene(77, cfg);
    FlashSceneSpec b = generate_scene(77, cfg);
    CHECK(max_abs_diff(a.transmission, b.transmission) == 0.0);
    CHECK(max_abs_diff(a.reflection, b.reflection) == 0.0);
    CHECK(max_abs_diff(a.depth, b.depth) == 0.0);
    CHECK(max_abs_diff(a.theta, b.theta) == 0.0);

    FlashSceneSpec c = generate_scene(78, cfg);
    CHECK(max_abs_diff(a.transmission, c.transmission) > 1e-4);
}

TEST_CASE("tonemap round trips and clips") {
    Rng rng(50);
    Tensor x = randu(rng, 1, 3, 9, 9);
    Tensor back = untonemap(tonemap(x));
    CHECK(max_abs_diff(back, x) < 1e-12);

    Tensor hot(1, 1, 2, 2);
    hot.v = {1.5, -0.25, 0.0, 1.0};
    Tensor tm = tonemap(hot);
    CHECK(tm.v[0] == 1.0);
    CHECK(tm.v[1] == 0.0);
    CHECK(tm.v[2] == 0.0);
    CHECK(tm.v[3] == 1.0);
    CHECK(tonemap(x).v[5] == std::pow(x.v[5], 1.0 / 2.2));
}

TEST_CASE("flash difference recovers the flash term on aligned pairs") {
    SceneConfig cfg;
    cfg.size = 32;
    FlashSceneSpec s = generate_scene(5, cfg);
    CapturePair p;
    p.no_flash = compose_no_flash(s);
    p.flash = compose_flash(s);
    CHECK(max_abs_diff(flash_difference(p), flash_term(s)) <= 1e-12);

    // subtraction clamps at zero
    CapturePair swapped;
    swapped.no_flash = p.flash;
    swapped.flash = p.no_flash;
    Tensor d = flash_difference(swapped);
    for (double v : d.v) CHECK(v == 0.0);

    CapturePair tm = p;
    tm.tonemapped = true;
    CHECK(kind_of([&] { flash_difference(tm); }) == ErrorKind::mode);
}

TEST_CASE("scene config validation rejects bad ranges") {
    auto broken = [](auto mut) {
        SceneConfig c;
        mut(c);
        return kind_of([&] { validate_scene_config(c); });
    };
    CHECK(broken([](SceneConfig& c) { c.size = 8; }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.channels = 2; }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.textures.clear(); }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.textures = {"plaid"}; }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.gamma_hi = 1.5; }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.theta_lo = 0.0; }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.brightness_lo = 0.0; }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.depth_lo = -1.0; }) == ErrorKind::config);
    CHECK(broken([](SceneConfig& c) { c.blur_sigma = -0.1; }) == ErrorKind::config);
}

TEST_CASE("scene validation rejects malformed specs") {
    SceneConfig cfg;
    cfg.size = 16;
    FlashSceneSpec s = generate_scene(2, cfg);

    FlashSceneSpec neg = s;
    neg.transmission.v[0] = -0.1;
    CHECK(kind_of([&] { validate_scene(neg); }) == ErrorKind::contract);

    FlashSceneSpec shp = s;
    shp.depth = Tensor(1, 1, 8, 8);
    CHECK(kind_of([&] { validate_scene(shp); }) == ErrorKind::shape);

    FlashSceneSpec gam = s;
    gam.gamma = Tensor(1, 1, 1, 1);
    gam.gamma.v[0] = 1.2;
    CHECK(kind_of([&] { validate_scene(gam); }) == ErrorKind::contract);
}

TEST_CASE("dataset round trips through 16-bit scaled pngs") {
    DatasetConfig cfg;
    cfg.scene.size = 16;
    cfg.count = 6;
    cfg.seed = 5;
    cfg.train_frac = 0.5;
    cfg.val_frac = 0.25;
    std::string root = tmp_dir("roundtrip");
    write_dataset(root, cfg);

    Dataset ds = read_dataset(root);
    CHECK(split_ids(ds, "train").size() == 3);
    CHECK(split_ids(ds, "val").size() == 2);
    CHECK(split_ids(ds, "test").size() == 1);

    for (const auto& ref : ds.samples) {
        LoadedSample ls = load_sample(ds, ref.id);
        FlashSceneSpec fresh = generate_scene(ref.seed, cfg.scene);
        auto tol = [](const Tensor& t) {
            double peak = 0.0;
            for (double v : t.v) peak = std::max(peak, v);
            return std::max(1.0, peak) / 65535.0 + 1e-9;
        };
        CHECK(max_abs_diff(ls.spec.transmission, fresh.transmission) <= tol(fresh.transmission));
        CHECK(max_abs_diff(ls.spec.reflection, fresh.reflection) <= tol(fresh.reflection));
        CHECK(max_abs_diff(ls.spec.depth, fresh.depth) <= tol(fresh.depth));
        CHECK(max_abs_diff(ls.flash_aligned, compose_flash(fresh)) <= tol(compose_flash(fresh)));
        CHECK(max_abs_diff(ls.pair.no_flash, compose_no_flash(fresh))
              <= tol(compose_no_flash(fresh)));
        CHECK(ls.pair.tonemapped == false);

        if (ls.split == "train") {
            CHECK(ls.pair.misalignment.kind == WarpKind::identity);
            CHECK(max_abs_diff(ls.pair.flash, ls.flash_aligned) <= 2.0 * tol(ls.flash_aligned));
            for (double v : ls.pair.flash_mask.v) CHECK(v == 1.0);
        } else {
            // corner jitter can push the homography past the translation cap
            double cap = cfg.eval_warp_max + cfg.eval_warp_jitter * std::sqrt(2.0);
            CHECK(warp_magnitude(ls.pair.misalignment, cfg.scene.size) <= cap + 1e-9);
            double valid = 0.0;
            for (double v : ls.pair.flash_mask.v) valid += v;
            CHECK(valid / double(ls.pair.flash_mask.size()) > 0.5);
        }
    }
}

TEST_CASE("tonemapped datasets store display-space captures") {
    DatasetConfig cfg;
    cfg.scene.size = 16;
    cfg.count = 2;
    cfg.tonemapped = true;
    std::string root = tmp_dir("tm");
    write_dataset(root, cfg);
    Dataset ds = read_dataset(root);
    LoadedSample ls = load_sample(ds, 0);
    CHECK(ls.pair.tonemapped);
    for (double v : ls.pair.flash.v) CHECK((v >= 0.0 && v <= 1.0));

    FlashSceneSpec fresh = generate_scene(ds.samples[0].seed, cfg.scene);
    CHECK(max_abs_diff(ls.spec.transmission, tonemap(fresh.transmission)) <= 1.0 / 65535.0 + 1e-9);
}

TEST_CASE("dataset bytes are identical across rebuilds") {
    DatasetConfig cfg;
    cfg.scene.size = 16;
    cfg.count = 3;
    cfg.seed = 9;
    std::string a = tmp_dir("det_a"), b = tmp_dir("det_b");
    write_dataset(a, cfg);
    write_dataset(b, cfg);
    auto ha = dir_hashes(a), hb = dir_hashes(b);
    CHECK(ha.size() > 0);
    CHECK(ha == hb);

    Dataset da = read_dataset(a), db = read_dataset(b);
    CHECK(dataset_manifest_hash(da) == dataset_manifest_hash(db));
}

TEST_CASE("dataset loading failures carry the load kind") {
    CHECK(kind_of([] { read_dataset("/nonexistent/dataset"); }) == ErrorKind::load);

    std::string root = tmp_dir("badload");
    DatasetConfig cfg;
    cfg.scene.size = 16;
    cfg.count = 1;
    write_dataset(root, cfg);
    Dataset ds = read_dataset(root);
    CHECK(kind_of([&] { load_sample(ds, 42); }) == ErrorKind::load);

    fs::remove(fs::path(root) / "s0000" / "flash.png");
    CHECK(kind_of([&] { load_sample(ds, 0); }) == ErrorKind::load);
}

TEST_CASE("dataset config validation and json round trip") {
    DatasetConfig cfg;
    auto broken = [&](auto mut) {
        DatasetConfig c = cfg;
        mut(c);
        return kind_of([&] { validate_dataset_config(c); });
    };
    CHECK(broken([](DatasetConfig& c) { c.count = 0; }) == ErrorKind::config);
    CHECK(broken([](DatasetConfig& c) { c.train_frac = 0.0; }) == ErrorKind::config);
    CHECK(broken([](DatasetConfig& c) { c.train_frac = 0.8; c.val_frac = 0.3; })
          == ErrorKind::config);
    CHECK(broken([](DatasetConfig& c) { c.eval_warp_max = -1.0; }) == ErrorKind::config);

    cfg.scene.per_pixel_gamma = true;
    cfg.count = 17;
    cfg.tonemapped = true;
    json j = dataset_config_to_json(cfg);
    DatasetConfig back = dataset_config_from_json(j);
    CHECK(dataset_config_to_json(back).dump() == j.dump());
}
