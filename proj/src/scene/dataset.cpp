#include "flashsplit/scene/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/hash.hpp"
#include "flashsplit/core/png_io.hpp"
#include "flashsplit/warp/warp.hpp"

namespace fs = std::filesystem;

namespace flashsplit {

namespace {

constexpr const char* kFormat = "flashsplit-dataset-v1";

// write img/scale so 16 bits cover the full range; returns the scale
double save_scaled(const std::string& path, const Tensor& img) {
    double peak = 0.0;
    for (double v : img.v) peak = std::max(peak, v);
    double scale = std::max(1.0, peak);
    Tensor scaled = img;
    for (double& v : scaled.v) v /= scale;
    write_png16(path, scaled);
    return scale;
}

Tensor load_scaled(const std::string& path, double scale) {
    Tensor img = read_png16(path);
    for (double& v : img.v) v *= scale;
    return img;
}

std::string sample_dirname(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04d", id);
    return buf;
}

} // namespace

void validate_dataset_config(const DatasetConfig& cfg) {
    validate_scene_config(cfg.scene);
    require(cfg.count >= 1, ErrorKind::config, "dataset count must be at least 1");
    require(cfg.train_frac > 0.0 && cfg.train_frac <= 1.0, ErrorKind::config,
            "train fraction must lie in (0,1]");
    require(cfg.val_frac >= 0.0 && cfg.train_frac + cfg.val_frac <= 1.0, ErrorKind::config,
            "train and val fractions must fit in [0,1]");
    require(cfg.eval_warp_max >= 0.0 && cfg.eval_warp_jitter >= 0.0, ErrorKind::config,
            "eval warp magnitudes must be non-negative");
}

json scene_config_to_json(const SceneConfig& cfg) {
    json j;
    j["size"] = cfg.size;
    j["channels"] = cfg.channels;
    j["textures"] = cfg.textures;
    j["gamma_lo"] = cfg.gamma_lo;
    j["gamma_hi"] = cfg.gamma_hi;
    j["theta_lo"] = cfg.theta_lo;
    j["theta_hi"] = cfg.theta_hi;
    j["per_pixel_gamma"] = cfg.per_pixel_gamma;
    j["flash_falloff"] = cfg.flash_falloff;
    j["blur_sigma"] = cfg.blur_sigma;
    j["brightness_lo"] = cfg.brightness_lo;
    j["brightness_hi"] = cfg.brightness_hi;
    j["depth_lo"] = cfg.depth_lo;
    j["depth_hi"] = cfg.depth_hi;
    return j;
}

SceneConfig scene_config_from_json(const json& j) {
    SceneConfig cfg;
    cfg.size = j.at("size").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.textures = j.at("textures").get<std::vector<std::string>>();
    cfg.gamma_lo = j.at("gamma_lo").get<double>();
    cfg.gamma_hi = j.at("gamma_hi").get<double>();
    cfg.theta_lo = j.at("theta_lo").get<double>();
    cfg.theta_hi = j.at("theta_hi").get<double>();
    cfg.per_pixel_gamma = j.at("per_pixel_gamma").get<bool>();
    cfg.flash_falloff = j.at("flash_falloff").get<bool>();
    cfg.blur_sigma = j.at("blur_sigma").get<double>();
    cfg.brightness_lo = j.at("brightness_lo").get<double>();
    cfg.brightness_hi = j.at("brightness_hi").get<double>();
    cfg.depth_lo = j.at("depth_lo").get<double>();
    cfg.depth_hi = j.at("depth_hi").get<double>();
    return cfg;
}

json dataset_config_to_json(const DatasetConfig& cfg) {
    json j;
    j["scene"] = scene_config_to_json(cfg.scene);
    j["count"] = cfg.count;
    j["seed"] = cfg.seed;
    j["tonemapped"] = cfg.tonemapped;
    j["train_frac"] = cfg.train_frac;
    j["val_frac"] = cfg.val_frac;
    j["eval_warp_max"] = cfg.eval_warp_max;
    j["eval_warp_jitter"] = cfg.eval_warp_jitter;
    return j;
}

DatasetConfig dataset_config_from_json(const json& j) {
    DatasetConfig cfg;
    cfg.scene = scene_config_from_json(j.at("scene"));
    cfg.count = j.at("count").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.tonemapped = j.at("tonemapped").get<bool>();
    cfg.train_frac = j.at("train_frac").get<double>();
    cfg.val_frac = j.at("val_frac").get<double>();
    cfg.eval_warp_max = j.at("eval_warp_max").get<double>();
    cfg.eval_warp_jitter = j.at("eval_warp_jitter").get<double>();
    return cfg;
}

std::string write_dataset(const std::string& dir, const DatasetConfig& cfg) {
    validate_dataset_config(cfg);
    fs::create_directories(dir);

    int ntrain = int(std::llround(cfg.count * cfg.train_frac));
    int nval = int(std::llround(cfg.count * cfg.val_frac));
    ntrain = std::clamp(ntrain, 1, cfg.count);
    nval = std::clamp(nval, 0, cfg.count - ntrain);

    Rng root(cfg.seed);
    std::set<uint64_t> seen;
    json samples = json::array();
    for (int i = 0; i < cfg.count; ++i) {
        uint64_t seed = root.child(uint64_t(i) + 1).seed();
        require(seen.insert(seed).second, ErrorKind::degenerate, "sample seed collision");
        std::string split = i < ntrain ? "train" : (i < ntrain + nval ? "val" : "test");

        FlashSceneSpec spec = generate_scene(seed, cfg.scene);
        WarpParams warp;
        if (split != "train") {
            uint64_t ws = seed ^ 0x5741525053454544ULL;
            Rng wr(Rng::splitmix64(ws));
            warp = random_misalignment(wr, cfg.eval_warp_max, cfg.eval_warp_jitter, cfg.scene.size);
        }
        CapturePair pair = make_misaligned_pair(spec, warp);
        Tensor flash_aligned = compose_flash(spec);

        Tensor st = spec.transmission, sr = spec.reflection;
        Tensor snf = pair.no_flash, sfl = pair.flash, sfa = flash_aligned;
        if (cfg.tonemapped) {
            st = tonemap(st);
            sr = tonemap(sr);
            snf = tonemap(snf);
            sfl = tonemap(sfl);
            sfa = tonemap(sfa);
        }

        std::string sdir = sample_dirname(i);
        fs::create_directories(fs::path(dir) / sdir);
        auto at = [&](const char* name) { return (fs::path(dir) / sdir / name).string(); };

        json scales;
        scales["transmission"] = save_scaled(at("transmission.png"), st);
        scales["reflection"] = save_scaled(at("reflection.png"), sr);
        scales["depth"] = save_scaled(at("depth.png"), spec.depth);
        scales["no_flash"] = save_scaled(at("no_flash.png"), snf);
        scales["flash_aligned"] = save_scaled(at("flash_aligned.png"), sfa);
        scales["flash"] = save_scaled(at("flash.png"), sfl);
        write_png16(at("mask.png"), pair.flash_mask);

        json meta;
        meta["id"] = i;
        meta["seed"] = seed;
        meta["split"] = split;
        meta["tonemapped"] = cfg.tonemapped;
        meta["warp"] = warp_to_json(warp);
        meta["size"] = cfg.scene.size;
        meta["channels"] = cfg.scene.channels;
        if (spec.gamma.size() == 1) meta["gamma"] = spec.gamma.v[0];
        else {
            meta["gamma"] = "map";
            scales["gamma"] = save_scaled(at("gamma.png"), spec.gamma);
        }
        if (spec.theta.size() == 1) meta["theta"] = spec.theta.v[0];
        else {
            meta["theta"] = "map";
            scales["theta"] = save_scaled(at("theta.png"), spec.theta);
        }
        meta["scales"] = scales;
        write_json_file(at("meta.json"), meta);

        json entry;
        entry["id"] = i;
        entry["dir"] = sdir;
        entry["seed"] = seed;
        entry["split"] = split;
        samples.push_back(entry);
    }

    json manifest;
    manifest["format"] = kFormat;
    manifest["config"] = dataset_config_to_json(cfg);
    manifest["count"] = cfg.count;
    manifest["samples"] = samples;
    std::string mpath = (fs::path(dir) / "manifest.json").string();
    write_json_file(mpath, manifest);
    return mpath;
}

Dataset read_dataset(const std::string& root) {
    Dataset ds;
    ds.root = root;
    ds.manifest = read_json_file((fs::path(root) / "manifest.json").string());
    require(ds.manifest.value("format", "") == kFormat, ErrorKind::load,
            "not a dataset manifest: " + root);
    ds.cfg = dataset_config_from_json(ds.manifest.at("config"));
    for (const auto& e : ds.manifest.at("samples")) {
        SampleRef r;
        r.id = e.at("id").get<int>();
        r.dir = e.at("dir").get<std::string>();
        r.seed = e.at("seed").get<uint64_t>();
        r.split = e.at("split").get<std::string>();
        ds.samples.push_back(r);
    }
    require(int(ds.samples.size()) == ds.manifest.at("count").get<int>(), ErrorKind::load,
            "manifest count disagrees with its sample list");
    return ds;
}

std::vector<int> split_ids(const Dataset& ds, const std::string& split) {
    std::vector<int> ids;
    for (const auto& s : ds.samples)
        if (s.split == split) ids.push_back(s.id);
    return ids;
}

uint64_t dataset_manifest_hash(const Dataset& ds) {
    return hash_file((fs::path(ds.root) / "manifest.json").string());
}

LoadedSample load_sample(const Dataset& ds, int id) {
    const SampleRef* ref = nullptr;
    for (const auto& s : ds.samples)
        if (s.id == id) ref = &s;
    require(ref != nullptr, ErrorKind::load, "sample id not in manifest: " + std::to_string(id));

    fs::path sdir = fs::path(ds.root) / ref->dir;
    json meta = read_json_file((sdir / "meta.json").string());
    const json& scales = meta.at("scales");
    auto at = [&](const char* name) { return (sdir / name).string(); };

    LoadedSample out;
    out.id = id;
    out.split = ref->split;
    out.spec.seed = meta.at("seed").get<uint64_t>();
    out.spec.transmission = load_scaled(at("transmission.png"), scales.at("transmission").get<double>());
    out.spec.reflection = load_scaled(at("reflection.png"), scales.at("reflection").get<double>());
    out.spec.depth = load_scaled(at("depth.png"), scales.at("depth").get<double>());

    int size = meta.at("size").get<int>();
    int channels = meta.at("channels").get<int>();
    require(out.spec.transmission.c == channels && out.spec.transmission.h == size
                && out.spec.transmission.w == size,
            ErrorKind::load, "sample image dims disagree with meta.json");

    if (meta.at("gamma").is_number()) {
        out.spec.gamma = Tensor(1, 1, 1, 1);
        out.spec.gamma.v[0] = meta.at("gamma").get<double>();
    } else {
        out.spec.gamma = load_scaled(at("gamma.png"), scales.at("gamma").get<double>());
    }
    if (meta.at("theta").is_number()) {
        out.spec.theta = Tensor(1, 1, 1, 1);
        out.spec.theta.v[0] = meta.at("theta").get<double>();
    } else {
        out.spec.theta = load_scaled(at("theta.png"), scales.at("theta").get<double>());
    }

    out.flash_aligned = load_scaled(at("flash_aligned.png"), scales.at("flash_aligned").get<double>());
    out.pair.no_flash = load_scaled(at("no_flash.png"), scales.at("no_flash").get<double>());
    out.pair.flash = load_scaled(at("flash.png"), scales.at("flash").get<double>());
    out.pair.flash_mask = read_png16(at("mask.png"));
    for (double& v : out.pair.flash_mask.v) v = v > 0.5 ? 1.0 : 0.0;
    out.pair.misalignment = warp_from_json(meta.at("warp"));
    out.pair.tonemapped = meta.at("tonemapped").get<bool>();
    out.pair.scene_seed = out.spec.seed;
    return out;
}

} // namespace flashsplit
