#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flashsplit/codec/codec.hpp"
#include "flashsplit/codec/cross_decoder.hpp"
#include "flashsplit/core/error.hpp"
#include "flashsplit/eval/metrics.hpp"
#include "flashsplit/train/losses.hpp"
#include "test_util.hpp"

using namespace flashsplit;
namespace fs = std::filesystem;

namespace {

CodecConfig tiny_cfg() {
    CodecConfig cfg;
    cfg.width = 4;
    cfg.latent_channels = 2;
    return cfg;
}

std::string tmp_path(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove(p);
    return p.string();
}

template <class F> ErrorKind kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected a typed error");
    return ErrorKind::io;
}

} // namespace

TEST_CASE("codec maps images to quarter-resolution latents and back") {
    CodecState st = codec_init(tiny_cfg(), 3);
    Rng rng(70);
    Tensor img = randu(rng, 2, 3, 16, 12);
    Tensor lat = encode(st, img);
    CHECK(lat.n == 2);
    CHECK(lat.c == 2);
    CHECK(lat.h == 4);
    CHECK(lat.w == 3);
    Tensor out = decode(st, lat);
    CHECK(out.same_shape(img));

    Tensor odd = randu(rng, 1, 3, 14, 16);
    CHECK_THROWS_AS(encode(st, odd), Error);
    Tensor wrongc = randu(rng, 1, 1, 16, 16);
    CHECK_THROWS_AS(encode(st, wrongc), Error);
}

TEST_CASE("codec init and encode are deterministic") {
    CodecState a = codec_init(tiny_cfg(), 9);
    CodecState b = codec_init(tiny_cfg(), 9);
    for (const auto& [name, t] : a.params.values)
        CHECK(max_abs_diff(t, b.params.values.at(name)) == 0.0);

    Rng rng(71);
    Tensor img = randu(rng, 1, 3, 16, 16);
    CHECK(max_abs_diff(encode(a, img), encode(b, img)) == 0.0);

    CodecState c = codec_init(tiny_cfg(), 10);
    CHECK(max_abs_diff(encode(a, img), encode(c, img)) > 1e-9);
}

TEST_CASE("codec checkpoints round trip bit for bit") {
    CodecState st = codec_init(tiny_cfg(), 4);
    st.lat_mean = {0.25, -0.5};
    st.lat_std = {1.5, 0.75};
    st.trained = true;
    std::string path = tmp_path("fs_codec.fsc");
    json meta;
    meta["note"] = "roundtrip";
    save_codec(path, st, meta);

    CodecState back = load_codec(path);
    CHECK(back.trained);
    CHECK(back.lat_mean == st.lat_mean);
    CHECK(back.lat_std == st.lat_std);
    CHECK(codec_config_to_json(back.cfg).dump() == codec_config_to_json(st.cfg).dump());
    for (const auto& [name, t] : st.params.values)
        CHECK(max_abs_diff(t, back.params.values.at(name)) == 0.0);

    Rng rng(72);
    Tensor img = randu(rng, 1, 3, 16, 16);
    CHECK(max_abs_diff(encode(st, img), encode(back, img)) == 0.0);
    CHECK(max_abs_diff(decode(st, encode(st, img)), decode(back, encode(back, img))) == 0.0);
}

TEST_CASE("checkpoint loading failures carry precise kinds") {
    CHECK(kind_of([] { load_codec("/nonexistent/model.fsc"); }) == ErrorKind::usage);

    std::string junk = tmp_path("fs_junk.fsc");
    {
        std::ofstream out(junk, std::ios::binary);
        out << "definitely not a checkpoint";
    }
    CHECK(kind_of([&] { load_codec(junk); }) == ErrorKind::load);

    CodecState st = codec_init(tiny_cfg(), 4);
    std::string path = tmp_path("fs_kind.fsc");
    save_codec(path, st, json::object());
    CHECK(kind_of([&] { load_cross_decoder(path); }) == ErrorKind::load);
}

TEST_CASE("fresh cross decoder reproduces the plain decode bit for bit") {
    CodecState codec = codec_init(tiny_cfg(), 5);
    codec.lat_mean = {0.1, -0.2};
    codec.lat_std = {1.2, 0.9};
    codec.trained = true;
    CrossDecoderState cd = cross_decoder_init(codec, "transmission");
    CHECK(cd.target == "transmission");

    Rng rng(73);
    for (int i = 0; i < 3; ++i) {
        Tensor lat = randn(rng, 2, 2, 4, 4);
        Tensor composite = randu(rng, 2, 3, 16, 16);
        Tensor plain = decode(codec, lat);
        Tensor cross = cross_latent_decode(cd, lat, composite);
        CHECK(max_abs_diff(plain, cross) == 0.0);
    }

    // conditioning flows once a skip projection becomes non-zero
    bool bumped = false;
    for (auto& [name, t] : cd.params.values)
        if (!bumped && name.find("skip") != std::string::npos) {
            t.v[0] = 0.05;
            bumped = true;
        }
    CHECK(bumped);
    Tensor lat = randn(rng, 1, 2, 4, 4);
    Tensor composite = randu(rng, 1, 3, 16, 16);
    CHECK(max_abs_diff(decode(codec, lat), cross_latent_decode(cd, lat, composite)) > 0.0);
}

TEST_CASE("cross decoder checkpoints keep the target tag") {
    CodecState codec = codec_init(tiny_cfg(), 6);
    codec.trained = true;
    CrossDecoderState cd = cross_decoder_init(codec, "reflection");
    std::string path = tmp_path("fs_cross.fsc");
    save_cross_decoder(path, cd, json::object());
    CrossDecoderState back = load_cross_decoder(path);
    CHECK(back.target == "reflection");
    CHECK(back.params.values.size() == cd.params.values.size());
    CHECK(kind_of([&] { load_codec(path); }) == ErrorKind::load);

    CHECK_THROWS_AS(cross_decoder_init(codec, "albedo"), Error);
}

TEST_CASE("differentiable ssim agrees with the metric") {
    Rng rng(74);
    Tensor a = randu(rng, 1, 3, 16, 16);
    Tensor b = randu(rng, 1, 3, 16, 16);
    ParamStore ps;
    Graph g;
    Bind bd{g, ps, false, {}};
    int sim = ssim_graph(g, g.input(a), g.input(b));
    CHECK(g.val(sim).size() == 1);
    CHECK(g.val(sim).v[0] == doctest::Approx(ssim(a, b)).epsilon(1e-9));

    int self = ssim_graph(g, g.input(a), g.input(a));
    CHECK(g.val(self).v[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("autoencoder gradients match finite differences") {
    CodecState st = codec_init(tiny_cfg(), 7);
    Rng rng(75);
    Tensor img = randu(rng, 1, 3, 8, 8);
    auto build = [&](Bind& b) {
        int x = b.g.input(img);
        int lat = encode_graph(b, st, x);
        int out = decode_graph(b, st, lat, true, false);
        return mean_sq_diff(b.g, out, x);
    };
    CHECK(fd_max_rel_err(st.params, build, {"enc.c0.w", "enc.c4.b", "dec.c2.w", "dec.c4.b"}, 6, 76)
          < 1e-3);
}

TEST_CASE("codec config validation") {
    auto broken = [](auto mut) {
        CodecConfig c;
        mut(c);
        return kind_of([&] { validate_codec_config(c); });
    };
    CHECK(broken([](CodecConfig& c) { c.image_channels = 2; }) == ErrorKind::config);
    CHECK(broken([](CodecConfig& c) { c.width = 1; }) == ErrorKind::config);
    CHECK(broken([](CodecConfig& c) { c.factor = 2; }) == ErrorKind::config);
    CHECK(broken([](CodecConfig& c) { c.latent_channels = 0; }) == ErrorKind::config);
    CHECK(broken([](CodecConfig& c) { c.max_scale = 0.5; }) == ErrorKind::config);
}
