#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "flashsplit/core/error.hpp"
#include "flashsplit/eval/metrics.hpp"
#include "flashsplit/train/trainer.hpp"
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

Dataset tiny_dataset(const char* tag, int count = 8) {
    DatasetConfig cfg;
    cfg.scene.size = 16;
    cfg.count = count;
    cfg.seed = 33;
    fs::path root = fs::temp_directory_path() / (std::string("fs_train_") + tag);
    fs::remove_all(root);
    write_dataset(root.string(), cfg);
    return read_dataset(root.string());
}

CodecConfig tiny_codec_cfg() {
    CodecConfig cfg;
    cfg.width = 8;
    cfg.latent_channels = 2;
    return cfg;
}

DenoiserConfig tiny_denoiser_cfg() {
    DenoiserConfig cfg;
    cfg.width = 4;
    cfg.latent_channels = 2;
    return cfg;
}

TrainConfig quick(int steps, int batch, uint64_t seed = 7) {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch = batch;
    tc.seed = seed;
    return tc;
}

} // namespace

TEST_CASE("codec training reduces the loss and standardizes latents") {
    Dataset ds = tiny_dataset("codec");
    TrainConfig tc = quick(220, 4);
    tc.ckpt_every = 100;
    TrainLog log;
    int sink_calls = 0, last_step = 0;
    CodecState st = train_codec(tc, tiny_codec_cfg(), ds, &log,
                                [&](const CodecState&, int step) {
                                    ++sink_calls;
                                    last_step = step;
                                });

    CHECK(st.trained);
    CHECK(log.final_loss < log.initial_loss);
    CHECK(log.lines.size() >= 4);
    CHECK(log.lines.front().substr(0, 2) == "0,");
    CHECK(sink_calls == 2);
    CHECK(last_step == 200);

    // fitted affine leaves the training pool standardized
    std::vector<Tensor> pool;
    for (int id : split_ids(ds, "train")) {
        LoadedSample s = load_sample(ds, id);
        pool.push_back(s.spec.transmission);
        pool.push_back(s.spec.reflection);
        pool.push_back(s.pair.no_flash);
        pool.push_back(s.flash_aligned);
    }
    int c = st.cfg.latent_channels;
    std::vector<double> sum(size_t(c), 0.0), sq(size_t(c), 0.0);
    int64_t n = 0;
    for (const Tensor& img : pool) {
        Tensor z = encode(st, img);
        size_t plane = size_t(z.h) * z.w;
        for (int ci = 0; ci < c; ++ci)
            for (size_t k = 0; k < plane; ++k) {
                double v = z.data()[size_t(ci) * plane + k];
                sum[size_t(ci)] += v;
                sq[size_t(ci)] += v * v;
            }
        n += int64_t(plane);
    }
    for (int ci = 0; ci < c; ++ci) {
        double mean = sum[size_t(ci)] / double(n);
        double sd = std::sqrt(sq[size_t(ci)] / double(n) - mean * mean);
        CHECK(std::abs(mean) < 1e-6);
        CHECK(sd == doctest::Approx(1.0).epsilon(1e-6));
    }

    double trained_psnr = codec_roundtrip_psnr(st, ds, "train");
    CHECK(trained_psnr > 14.0);

    CHECK(kind_of([&] {
              CodecState raw = codec_init(tiny_codec_cfg(), 1);
              codec_roundtrip_psnr(raw, ds, "train");
          })
          == ErrorKind::usage);
}

TEST_CASE("training aborts with a typed error when the loss explodes") {
    Dataset ds = tiny_dataset("nan");
    TrainConfig tc = quick(8, 2);
    // one step of this moves the weights far enough to overflow the next pass
    tc.lr = 1e160;
    CHECK(kind_of([&] { train_codec(tc, tiny_codec_cfg(), ds, nullptr); })
          == ErrorKind::training);
}

TEST_CASE("trainer rejects mode and channel mismatches") {
    Dataset ds = tiny_dataset("mode");
    CodecConfig cc = tiny_codec_cfg();
    cc.tonemapped = true;
    CHECK(kind_of([&] { train_codec(quick(1, 1), cc, ds, nullptr); }) == ErrorKind::mode);

    CodecConfig mono = tiny_codec_cfg();
    mono.image_channels = 1;
    CHECK(kind_of([&] { train_codec(quick(1, 1), mono, ds, nullptr); }) == ErrorKind::config);

    CodecState raw = codec_init(tiny_codec_cfg(), 2);
    CHECK(kind_of([&] { train_stage1(quick(1, 1), tiny_denoiser_cfg(), ds, raw, false); })
          == ErrorKind::usage);
}

TEST_CASE("stage-1 training is deterministic and tags its flags") {
    Dataset ds = tiny_dataset("stage1");
    TrainConfig tc = quick(30, 2);
    CodecState codec = train_codec(quick(60, 4), tiny_codec_cfg(), ds, nullptr);

    TrainLog la, lb;
    DualDenoiserState a = train_stage1(tc, tiny_denoiser_cfg(), ds, codec, false, &la);
    DualDenoiserState b = train_stage1(tc, tiny_denoiser_cfg(), ds, codec, false, &lb);
    CHECK(a.trained);
    CHECK(!a.single_image);
    CHECK(!a.tonemapped);
    CHECK(la.final_loss == lb.final_loss);
    for (const auto& [name, t] : a.params.values)
        CHECK(max_abs_diff(t, b.params.values.at(name)) == 0.0);

    DualDenoiserState s = train_stage1(quick(5, 2), tiny_denoiser_cfg(), ds, codec, true);
    CHECK(s.single_image);

    TrainConfig other = quick(30, 2, 8);
    DualDenoiserState c = train_stage1(other, tiny_denoiser_cfg(), ds, codec, false);
    double diff = 0.0;
    for (const auto& [name, t] : a.params.values)
        diff = std::max(diff, max_abs_diff(t, c.params.values.at(name)));
    CHECK(diff > 0.0);
}

TEST_CASE("stage-2 tuples pair every sample with both targets") {
    Dataset ds = tiny_dataset("stage2");
    CodecState codec = train_codec(quick(60, 4), tiny_codec_cfg(), ds, nullptr);
    DualDenoiserState st = train_stage1(quick(10, 2), tiny_denoiser_cfg(), ds, codec, false);

    std::vector<int> ids = split_ids(ds, "train");
    json prov;
    std::vector<Stage2Tuple> tuples = generate_stage2_dataset(st, codec, ds, ids, 4, 55, &prov);
    CHECK(tuples.size() == 2 * ids.size());
    CHECK(prov.at("tuples").get<int>() == int(tuples.size()));
    CHECK(prov.at("seed").get<uint64_t>() == 55);
    CHECK(prov.at("ddim_steps").get<int>() == 4);

    int trans = 0, refl = 0;
    for (const Stage2Tuple& t : tuples) {
        LoadedSample s = load_sample(ds, t.sample_id);
        CHECK(t.lat.n == 1);
        CHECK(t.lat.c == 2);
        CHECK(t.lat.h == 4);
        CHECK(t.lat.w == 4);
        CHECK(max_abs_diff(t.composite, s.pair.no_flash) == 0.0);
        if (t.target == "transmission") {
            ++trans;
            CHECK(max_abs_diff(t.gt, s.spec.transmission) == 0.0);
        } else {
            ++refl;
            CHECK(max_abs_diff(t.gt, s.spec.reflection) == 0.0);
        }
    }
    CHECK(trans == int(ids.size()));
    CHECK(refl == int(ids.size()));

    std::vector<Stage2Tuple> again = generate_stage2_dataset(st, codec, ds, ids, 4, 55, nullptr);
    for (size_t i = 0; i < tuples.size(); ++i)
        CHECK(max_abs_diff(tuples[i].lat, again[i].lat) == 0.0);
    std::vector<Stage2Tuple> reseeded = generate_stage2_dataset(st, codec, ds, ids, 4, 56, nullptr);
    CHECK(max_abs_diff(tuples[0].lat, reseeded[0].lat) > 0.0);

    CHECK(kind_of([&] { generate_stage2_dataset(st, codec, ds, {}, 4, 1, nullptr); })
          == ErrorKind::config);
}

TEST_CASE("stage-2 training fits the conditioned decoder") {
    Dataset ds = tiny_dataset("s2train");
    CodecState codec = train_codec(quick(60, 4), tiny_codec_cfg(), ds, nullptr);
    DualDenoiserState st = train_stage1(quick(10, 2), tiny_denoiser_cfg(), ds, codec, false);
    std::vector<int> ids = split_ids(ds, "train");
    std::vector<Stage2Tuple> tuples = generate_stage2_dataset(st, codec, ds, ids, 4, 55, nullptr);

    TrainLog log;
    CrossDecoderState cd = train_stage2(quick(12, 2), tuples, codec, "transmission", nullptr, &log);
    CHECK(cd.trained);
    CHECK(cd.target == "transmission");
    CHECK(std::isfinite(log.final_loss));
    CHECK(!log.lines.empty());

    EncoderPerceptualLoss pl(&codec);
    CrossDecoderState cd2 = train_stage2(quick(4, 2), tuples, codec, "reflection", &pl, nullptr);
    CHECK(cd2.target == "reflection");

    std::vector<Stage2Tuple> only_t;
    for (const Stage2Tuple& t : tuples)
        if (t.target == "transmission") only_t.push_back(t);
    CHECK(kind_of([&] { train_stage2(quick(1, 1), only_t, codec, "reflection", nullptr); })
          == ErrorKind::config);
}

TEST_CASE("train config validation and json round trip") {
    auto broken = [](auto mut) {
        TrainConfig c;
        mut(c);
        return kind_of([&] { validate_train_config(c); });
    };
    CHECK(broken([](TrainConfig& c) { c.steps = 0; }) == ErrorKind::config);
    CHECK(broken([](TrainConfig& c) { c.batch = 0; }) == ErrorKind::config);
    CHECK(broken([](TrainConfig& c) { c.lr = -1.0; }) == ErrorKind::config);
    CHECK(broken([](TrainConfig& c) { c.perceptual = "vgg"; }) == ErrorKind::config);
    CHECK(broken([](TrainConfig& c) { c.log_every = 0; }) == ErrorKind::config);
    CHECK(broken([](TrainConfig& c) { c.ckpt_every = -1; }) == ErrorKind::config);

    TrainConfig tc;
    tc.steps = 17;
    tc.perceptual = "encoder";
    tc.ckpt_every = 5;
    json j = train_config_to_json(tc);
    TrainConfig back = train_config_from_json(j);
    CHECK(train_config_to_json(back).dump() == j.dump());
}
