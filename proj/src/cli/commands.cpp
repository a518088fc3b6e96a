#include "flashsplit/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flashsplit/cli/config.hpp"
#include "flashsplit/core/error.hpp"
#include "flashsplit/core/hash.hpp"
#include "flashsplit/core/png_io.hpp"
#include "flashsplit/core/rng.hpp"
#include "flashsplit/eval/compare.hpp"
#include "flashsplit/eval/metrics.hpp"
#include "flashsplit/train/trainer.hpp"
#include "flashsplit/warp/sweep.hpp"

namespace fs = std::filesystem;

namespace flashsplit {
namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
    std::vector<int> out;
    for (const std::string& tok : split_csv(s)) {
        size_t pos = 0;
        int v = 0;
        try {
            v = std::stoi(tok, &pos);
        } catch (...) {
            pos = 0;
        }
        require(!tok.empty() && pos == tok.size(), ErrorKind::config,
                "bad " + what + " entry: '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const std::string& tok : split_csv(s)) {
        size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &pos);
        } catch (...) {
            pos = 0;
        }
        require(!tok.empty() && pos == tok.size(), ErrorKind::config,
                "bad " + what + " entry: '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

std::string resolve_data_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    const char* env = std::getenv("FLASHSPLIT_DATA_DIR");
    if (env && *env) return env;
    raise(ErrorKind::config, "no dataset directory; pass --data or set FLASHSPLIT_DATA_DIR");
}

std::string sample_dirname(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04d", id);
    return buf;
}

double save_scaled_png(const std::string& path, const Tensor& img) {
    double peak = 0.0;
    for (double v : img.v) peak = std::max(peak, v);
    double scale = std::max(1.0, peak);
    Tensor s = img;
    for (double& v : s.v) v /= scale;
    write_png16(path, s);
    return scale;
}

Tensor batch_row(const Tensor& t, size_t i) {
    Tensor out(1, t.c, t.h, t.w);
    size_t sz = out.size();
    std::copy(t.v.begin() + static_cast<long>(i * sz),
              t.v.begin() + static_cast<long>((i + 1) * sz), out.v.begin());
    return out;
}

struct GenArgs {
    std::string config, out;
    uint64_t seed = 0;
    int count = 0, size = 0;
    bool tonemapped = false;
};

struct TrainArgs {
    std::string config, stage, data, out, codec, stage1, target = "transmission";
    bool single_image = false;
    uint64_t seed = 0;
    int steps = 0, batch = 0;
    double lr = 0.0;
};

struct InferArgs {
    std::string config, data, out, codec, stage1, stage2t, stage2r, split = "test", ids;
    int steps = 0;
    uint64_t seed = 0;
};

struct EvalArgs {
    std::string config, data, out, codec, stage1, stage1_single, stage2t, stage2r;
    std::string split = "test", methods, magnitudes;
    int steps = 0, max_samples = 0;
    uint64_t seed = 0;
};

json checkpoint_hashes(const std::vector<std::pair<std::string, std::string>>& items) {
    json j = json::object();
    for (const auto& [name, path] : items)
        if (!path.empty()) j[name] = hex64(hash_file(path));
    return j;
}

void write_train_log(const std::string& ckpt_path, const TrainLog& log) {
    std::string csv = "step,loss\n";
    for (const std::string& line : log.lines) csv += line + "\n";
    write_text_file(ckpt_path + ".log.csv", csv);
}

void run_gen(const GenArgs& a, const json& ov) {
    LoadedConfig lc = load_pipeline_config(a.config, ov);
    std::string manifest = write_dataset(a.out, lc.cfg.data);
    std::printf("dataset: %s\n", manifest.c_str());
    std::printf("config_fnv1a64: %s\n", json_hash_hex(lc.canonical).c_str());
}

void run_train(const TrainArgs& a, const json& ov) {
    require(a.stage == "codec" || a.stage == "stage1" || a.stage == "stage2", ErrorKind::config,
            "--stage must be codec, stage1 or stage2");
    require(!a.single_image || a.stage == "stage1", ErrorKind::config,
            "--single-image only applies to stage1");
    LoadedConfig lc = load_pipeline_config(a.config, ov);
    Dataset ds = read_dataset(resolve_data_dir(a.data));
    const TrainConfig& tc = a.stage == "codec"
                                ? lc.cfg.train_codec
                                : (a.stage == "stage1" ? lc.cfg.train_stage1 : lc.cfg.train_stage2);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());

    json meta;
    meta["config"] = lc.canonical;
    meta["config_fnv1a64"] = json_hash_hex(lc.canonical);
    meta["dataset_manifest_fnv1a64"] = hex64(dataset_manifest_hash(ds));
    TrainLog log;

    if (a.stage == "codec") {
        CodecState st = train_codec(tc, lc.cfg.codec, ds, &log,
                                    [&](const CodecState& s, int) { save_codec(a.out, s, meta); });
        save_codec(a.out, st, meta);
    } else if (a.stage == "stage1") {
        require(!a.codec.empty(), ErrorKind::config, "stage1 training needs --codec");
        CodecState codec = load_codec(a.codec);
        meta["parents"] = checkpoint_hashes({{"codec", a.codec}});
        DualDenoiserState st =
            train_stage1(tc, lc.cfg.denoiser, ds, codec, a.single_image, &log,
                         [&](const DualDenoiserState& s, int) { save_denoiser(a.out, s, meta); });
        save_denoiser(a.out, st, meta);
    } else {
        require(!a.codec.empty() && !a.stage1.empty(), ErrorKind::config,
                "stage2 training needs --codec and --stage1");
        require(a.target == "transmission" || a.target == "reflection", ErrorKind::config,
                "--target must be transmission or reflection");
        CodecState codec = load_codec(a.codec);
        DualDenoiserState s1 = load_denoiser(a.stage1);
        meta["parents"] = checkpoint_hashes({{"codec", a.codec}, {"stage1", a.stage1}});
        json prov;
        std::vector<Stage2Tuple> tuples =
            generate_stage2_dataset(s1, codec, ds, split_ids(ds, "train"),
                                    lc.cfg.infer.stage2_data_steps, tc.seed, &prov);
        meta["stage2_data"] = prov;
        EncoderPerceptualLoss perc(&codec);
        PerceptualLoss* pp = tc.perceptual == "encoder" ? &perc : nullptr;
        CrossDecoderState st = train_stage2(
            tc, tuples, codec, a.target, pp, &log,
            [&](const CrossDecoderState& s, int) { save_cross_decoder(a.out, s, meta); });
        save_cross_decoder(a.out, st, meta);
    }
    write_train_log(a.out, log);
    std::printf("stage: %s\n", a.stage.c_str());
    std::printf("loss: %.10g -> %.10g over %d steps\n", log.initial_loss, log.final_loss, tc.steps);
    std::printf("checkpoint: %s\n", a.out.c_str());
}

void run_infer(const InferArgs& a, const json& ov) {
    require(!a.codec.empty() && !a.stage1.empty(), ErrorKind::config,
            "infer needs --codec and --stage1");
    require(a.stage2t.empty() == a.stage2r.empty(), ErrorKind::config,
            "pass both --stage2t and --stage2r or neither");
    LoadedConfig lc = load_pipeline_config(a.config, ov);
    Dataset ds = read_dataset(resolve_data_dir(a.data));
    CodecState codec = load_codec(a.codec);
    DualDenoiserState s1 = load_denoiser(a.stage1);
    std::optional<CrossDecoderState> dec_t, dec_r;
    const bool cross = !a.stage2t.empty();
    if (cross) {
        dec_t = load_cross_decoder(a.stage2t);
        dec_r = load_cross_decoder(a.stage2r);
        require(dec_t->target == "transmission" && dec_r->target == "reflection",
                ErrorKind::config, "stage-2 checkpoints have the wrong targets");
    }

    std::vector<int> ids =
        a.ids.empty() ? split_ids(ds, a.split) : parse_int_list(a.ids, "--ids");
    require(!ids.empty(), ErrorKind::config, "no samples selected");
    const int steps = a.steps > 0 ? a.steps : lc.cfg.infer.steps;
    const uint64_t seed = a.seed != 0 ? a.seed : lc.cfg.eval.seed;

    LearnedStack stack;
    stack.seed = seed;
    std::vector<uint64_t> seeds = separation_seeds(stack, ids, 1);

    fs::create_directories(a.out);
    json per_sample = json::object();
    const size_t chunk = 8;
    for (size_t base = 0; base < ids.size(); base += chunk) {
        size_t n = std::min(chunk, ids.size() - base);
        std::vector<LoadedSample> samples;
        std::vector<const CapturePair*> pairs;
        std::vector<uint64_t> sseeds;
        for (size_t i = 0; i < n; ++i) {
            samples.push_back(load_sample(ds, ids[base + i]));
            sseeds.push_back(seeds[base + i]);
        }
        for (const LoadedSample& s : samples) pairs.push_back(&s.pair);
        SeparatedLatents sl = separate(s1, codec, pairs, steps, sseeds);
        for (size_t i = 0; i < n; ++i) {
            Tensor zt = batch_row(sl.lat_t, i);
            Tensor zr = batch_row(sl.lat_r, i);
            Tensor et = cross ? cross_latent_decode(*dec_t, zt, samples[i].pair.no_flash)
                              : decode(codec, zt);
            Tensor er = cross ? cross_latent_decode(*dec_r, zr, samples[i].pair.no_flash)
                              : decode(codec, zr);
            std::string sdir = (fs::path(a.out) / sample_dirname(samples[i].id)).string();
            fs::create_directories(sdir);
            json sj;
            sj["transmission_scale"] = save_scaled_png(sdir + "/transmission.png", et);
            sj["reflection_scale"] = save_scaled_png(sdir + "/reflection.png", er);
            sj["psnr_t"] = psnr(et, samples[i].spec.transmission);
            sj["psnr_r"] = psnr(er, samples[i].spec.reflection);
            per_sample[sample_dirname(samples[i].id)] = sj;
        }
    }

    json prov;
    prov["config"] = lc.canonical;
    prov["config_fnv1a64"] = json_hash_hex(lc.canonical);
    prov["dataset_manifest_fnv1a64"] = hex64(dataset_manifest_hash(ds));
    prov["checkpoints"] = checkpoint_hashes(
        {{"codec", a.codec}, {"stage1", a.stage1}, {"stage2t", a.stage2t}, {"stage2r", a.stage2r}});
    prov["steps"] = steps;
    prov["seed"] = seed;
    prov["decode"] = cross ? "cross_latent" : "plain";
    prov["samples"] = per_sample;
    write_json_file((fs::path(a.out) / "provenance.json").string(), prov);
    std::printf("separated %zu samples into %s\n", ids.size(), a.out.c_str());
}

struct StackStorage {
    std::optional<CodecState> codec;
    std::optional<DualDenoiserState> stage1, stage1_single;
    std::optional<CrossDecoderState> dec_t, dec_r;
};

LearnedStack load_stack(const EvalArgs& a, StackStorage& store, int steps, uint64_t seed) {
    if (!a.codec.empty()) store.codec = load_codec(a.codec);
    if (!a.stage1.empty()) store.stage1 = load_denoiser(a.stage1);
    if (!a.stage1_single.empty()) store.stage1_single = load_denoiser(a.stage1_single);
    if (!a.stage2t.empty()) store.dec_t = load_cross_decoder(a.stage2t);
    if (!a.stage2r.empty()) store.dec_r = load_cross_decoder(a.stage2r);
    LearnedStack stack;
    if (store.codec) stack.codec = &*store.codec;
    if (store.stage1) stack.stage1 = &*store.stage1;
    if (store.stage1_single) stack.stage1_single = &*store.stage1_single;
    if (store.dec_t) stack.dec_t = &*store.dec_t;
    if (store.dec_r) stack.dec_r = &*store.dec_r;
    stack.steps = steps;
    stack.seed = seed;
    return stack;
}

std::vector<std::string> pick_methods(const EvalArgs& a, const PipelineConfig& cfg,
                                      const Dataset& ds, const LearnedStack& stack, bool sweep) {
    if (!a.methods.empty()) return split_csv(a.methods);
    if (!cfg.eval.methods.empty()) return cfg.eval.methods;
    std::vector<std::string> out;
    for (const std::string& m : kAllMethods) {
        const bool diff = m == "naive_diff" || m == "prealign_diff";
        if (diff && ds.cfg.tonemapped) continue;
        if (m == "flash_split" && !(stack.codec && stack.stage1 && stack.dec_t && stack.dec_r))
            continue;
        if (m == "flash_split_vanilla_decode" && !(stack.codec && stack.stage1)) continue;
        if (m == "flash_split_single_image" && !(stack.codec && stack.stage1_single)) continue;
        if (sweep && !diff && m != "flash_split") continue;
        out.push_back(m);
    }
    require(!out.empty(), ErrorKind::config, "no runnable methods; pass checkpoints or --methods");
    return out;
}

std::vector<int> pick_ids(const Dataset& ds, const std::string& split, int max_samples) {
    std::vector<int> ids = split_ids(ds, split);
    require(!ids.empty(), ErrorKind::config, "split has no samples: " + split);
    if (max_samples > 0 && static_cast<int>(ids.size()) > max_samples)
        ids.resize(static_cast<size_t>(max_samples));
    return ids;
}

json eval_extra(const EvalArgs& a, const LoadedConfig& lc, const std::string& split) {
    json extra;
    extra["config_fnv1a64"] = json_hash_hex(lc.canonical);
    extra["checkpoints"] = checkpoint_hashes({{"codec", a.codec},
                                              {"stage1", a.stage1},
                                              {"stage1_single", a.stage1_single},
                                              {"stage2t", a.stage2t},
                                              {"stage2r", a.stage2r}});
    extra["split"] = split;
    return extra;
}

void run_eval(const EvalArgs& a, const json& ov) {
    LoadedConfig lc = load_pipeline_config(a.config, ov);
    Dataset ds = read_dataset(resolve_data_dir(a.data));
    const int steps = a.steps > 0 ? a.steps : lc.cfg.infer.steps;
    const uint64_t seed = a.seed != 0 ? a.seed : lc.cfg.eval.seed;
    StackStorage store;
    LearnedStack stack = load_stack(a, store, steps, seed);
    std::vector<std::string> methods = pick_methods(a, lc.cfg, ds, stack, false);
    std::vector<int> ids =
        pick_ids(ds, a.split, a.max_samples > 0 ? a.max_samples : lc.cfg.eval.max_samples);
    json summary = compare_methods(ds, ids, methods, stack, a.out, eval_extra(a, lc, a.split));
    for (const auto& [m, jm] : summary.at("methods").items())
        std::printf("%-28s headline psnr %8.3f dB\n", m.c_str(),
                    jm.at("headline_psnr").get<double>());
    std::printf("report: %s\n", (fs::path(a.out) / "summary.json").string().c_str());
}

void run_sweep(const EvalArgs& a, const json& ov) {
    LoadedConfig lc = load_pipeline_config(a.config, ov);
    Dataset ds = read_dataset(resolve_data_dir(a.data));
    const int steps = a.steps > 0 ? a.steps : lc.cfg.infer.steps;
    const uint64_t seed = a.seed != 0 ? a.seed : lc.cfg.eval.seed;
    StackStorage store;
    LearnedStack stack = load_stack(a, store, steps, seed);
    std::vector<std::string> methods = pick_methods(a, lc.cfg, ds, stack, true);
    std::vector<double> mags = a.magnitudes.empty()
                                   ? lc.cfg.eval.sweep_magnitudes
                                   : parse_double_list(a.magnitudes, "--magnitudes");
    std::vector<int> ids =
        pick_ids(ds, a.split, a.max_samples > 0 ? a.max_samples : lc.cfg.eval.max_samples);
    misalignment_sweep(ds, ids, mags, methods, stack, a.out, eval_extra(a, lc, a.split));
    std::printf("report: %s\n", (fs::path(a.out) / "sweep.csv").string().c_str());
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"two-stage flash/no-flash reflection separation"};
    app.require_subcommand(1);

    GenArgs ga;
    auto* gen = app.add_subcommand("gen-data", "render a synthetic capture corpus");
    gen->add_option("--config", ga.config, "pipeline config json");
    gen->add_option("--out", ga.out, "output dataset directory")->required();
    gen->add_option("--seed", ga.seed, "override data.seed");
    gen->add_option("--count", ga.count, "override data.count");
    gen->add_option("--size", ga.size, "override data.scene.size");
    gen->add_flag("--tonemapped", ga.tonemapped, "store display-space captures");

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "optimize one pipeline stage");
    tr->add_option("--config", ta.config, "pipeline config json");
    tr->add_option("--stage", ta.stage, "codec, stage1 or stage2")->required();
    tr->add_option("--data", ta.data, "dataset directory (or FLASHSPLIT_DATA_DIR)");
    tr->add_option("--out", ta.out, "checkpoint path")->required();
    tr->add_option("--codec", ta.codec, "codec checkpoint (stage1/stage2)");
    tr->add_option("--stage1", ta.stage1, "stage-1 checkpoint (stage2)");
    tr->add_option("--target", ta.target, "stage-2 layer: transmission or reflection");
    tr->add_flag("--single-image", ta.single_image, "train stage1 without the flash capture");
    tr->add_option("--seed", ta.seed, "override the stage seed");
    tr->add_option("--steps", ta.steps, "override the stage step count");
    tr->add_option("--batch", ta.batch, "override the stage batch size");
    tr->add_option("--lr", ta.lr, "override the stage learning rate");

    InferArgs ia;
    auto* in = app.add_subcommand("infer", "separate captures with a trained stack");
    in->add_option("--config", ia.config, "pipeline config json");
    in->add_option("--data", ia.data, "dataset directory (or FLASHSPLIT_DATA_DIR)");
    in->add_option("--out", ia.out, "output directory")->required();
    in->add_option("--codec", ia.codec, "codec checkpoint")->required();
    in->add_option("--stage1", ia.stage1, "stage-1 checkpoint")->required();
    in->add_option("--stage2t", ia.stage2t, "transmission stage-2 checkpoint");
    in->add_option("--stage2r", ia.stage2r, "reflection stage-2 checkpoint");
    in->add_option("--split", ia.split, "dataset split to read (default test)");
    in->add_option("--ids", ia.ids, "comma-separated sample ids");
    in->add_option("--steps", ia.steps, "DDIM steps");
    in->add_option("--seed", ia.seed, "sampling seed");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "score methods on a split");
    ev->add_option("--config", ea.config, "pipeline config json");
    ev->add_option("--data", ea.data, "dataset directory (or FLASHSPLIT_DATA_DIR)");
    ev->add_option("--out", ea.out, "report directory")->required();
    ev->add_option("--codec", ea.codec, "codec checkpoint");
    ev->add_option("--stage1", ea.stage1, "stage-1 checkpoint");
    ev->add_option("--stage1-single", ea.stage1_single, "single-image stage-1 checkpoint");
    ev->add_option("--stage2t", ea.stage2t, "transmission stage-2 checkpoint");
    ev->add_option("--stage2r", ea.stage2r, "reflection stage-2 checkpoint");
    ev->add_option("--split", ea.split, "dataset split (default test)");
    ev->add_option("--methods", ea.methods, "comma-separated method list");
    ev->add_option("--steps", ea.steps, "DDIM steps");
    ev->add_option("--seed", ea.seed, "sampling seed");
    ev->add_option("--max-samples", ea.max_samples, "cap on evaluated samples");

    EvalArgs sa;
    auto* sw = app.add_subcommand("sweep", "psnr vs misalignment magnitude");
    sw->add_option("--config", sa.config, "pipeline config json");
    sw->add_option("--data", sa.data, "dataset directory (or FLASHSPLIT_DATA_DIR)");
    sw->add_option("--out", sa.out, "report directory")->required();
    sw->add_option("--codec", sa.codec, "codec checkpoint");
    sw->add_option("--stage1", sa.stage1, "stage-1 checkpoint");
    sw->add_option("--stage2t", sa.stage2t, "transmission stage-2 checkpoint");
    sw->add_option("--stage2r", sa.stage2r, "reflection stage-2 checkpoint");
    sw->add_option("--split", sa.split, "dataset split (default test)");
    sw->add_option("--methods", sa.methods, "comma-separated method list");
    sw->add_option("--magnitudes", sa.magnitudes, "comma-separated pixel offsets");
    sw->add_option("--steps", sa.steps, "DDIM steps");
    sw->add_option("--seed", sa.seed, "sampling seed");
    sw->add_option("--max-samples", sa.max_samples, "cap on evaluated samples");

    gen->callback([&] {
        json ov = json::object();
        if (gen->count("--seed")) ov["data"]["seed"] = ga.seed;
        if (gen->count("--count")) ov["data"]["count"] = ga.count;
        if (gen->count("--size")) ov["data"]["scene"]["size"] = ga.size;
        if (ga.tonemapped) {
            ov["data"]["tonemapped"] = true;
            ov["codec"]["tonemapped"] = true;
        }
        run_gen(ga, ov);
    });
    tr->callback([&] {
        require(ta.stage == "codec" || ta.stage == "stage1" || ta.stage == "stage2",
                ErrorKind::config, "--stage must be codec, stage1 or stage2");
        json ov = json::object();
        if (tr->count("--seed")) ov["train"][ta.stage]["seed"] = ta.seed;
        if (tr->count("--steps")) ov["train"][ta.stage]["steps"] = ta.steps;
        if (tr->count("--batch")) ov["train"][ta.stage]["batch"] = ta.batch;
        if (tr->count("--lr")) ov["train"][ta.stage]["lr"] = ta.lr;
        run_train(ta, ov);
    });
    in->callback([&] { run_infer(ia, json::object()); });
    ev->callback([&] { run_eval(ea, json::object()); });
    sw->callback([&] { run_sweep(sa, json::object()); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        switch (e.kind()) {
            case ErrorKind::config: return 2;
            case ErrorKind::usage: return 3;
            case ErrorKind::mode: return 4;
            default: return 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

} // namespace flashsplit
