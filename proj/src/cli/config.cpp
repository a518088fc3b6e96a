#include "flashsplit/cli/config.hpp"

#include <filesystem>

#include "flashsplit/core/error.hpp"

namespace flashsplit {

PipelineConfig default_pipeline_config() {
    PipelineConfig cfg;
    cfg.train_codec.steps = 2000;
    cfg.train_stage1.steps = 4000;
    cfg.train_stage2.steps = 1500;
    return cfg;
}

json pipeline_config_to_json(const PipelineConfig& cfg) {
    json j;
    j["data"] = dataset_config_to_json(cfg.data);
    j["codec"] = codec_config_to_json(cfg.codec);
    j["denoiser"] = denoiser_config_to_json(cfg.denoiser);
    j["infer"] = {{"steps", cfg.infer.steps}, {"stage2_data_steps", cfg.infer.stage2_data_steps}};
    j["train"] = {{"codec", train_config_to_json(cfg.train_codec)},
                  {"stage1", train_config_to_json(cfg.train_stage1)},
                  {"stage2", train_config_to_json(cfg.train_stage2)}};
    j["eval"] = {{"sweep_magnitudes", cfg.eval.sweep_magnitudes},
                 {"methods", cfg.eval.methods},
                 {"max_samples", cfg.eval.max_samples},
                 {"seed", cfg.eval.seed}};
    return j;
}

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig cfg;
    cfg.data = dataset_config_from_json(j.at("data"));
    cfg.codec = codec_config_from_json(j.at("codec"));
    cfg.denoiser = denoiser_config_from_json(j.at("denoiser"));
    const json& ji = j.at("infer");
    cfg.infer.steps = ji.at("steps").get<int>();
    cfg.infer.stage2_data_steps = ji.at("stage2_data_steps").get<int>();
    const json& jt = j.at("train");
    cfg.train_codec = train_config_from_json(jt.at("codec"));
    cfg.train_stage1 = train_config_from_json(jt.at("stage1"));
    cfg.train_stage2 = train_config_from_json(jt.at("stage2"));
    const json& je = j.at("eval");
    cfg.eval.sweep_magnitudes = je.at("sweep_magnitudes").get<std::vector<double>>();
    cfg.eval.methods = je.at("methods").get<std::vector<std::string>>();
    cfg.eval.max_samples = je.at("max_samples").get<int>();
    cfg.eval.seed = je.at("seed").get<uint64_t>();
    return cfg;
}

static const char* type_name(const json& j) {
    if (j.is_object()) return "object";
    if (j.is_array()) return "array";
    if (j.is_string()) return "string";
    if (j.is_boolean()) return "bool";
    if (j.is_number()) return "number";
    return "null";
}

json merge_config(const json& defaults, const json& user, const std::string& path) {
    require(user.is_object(), ErrorKind::config,
            "config section must be an object: " + (path.empty() ? std::string("<root>") : path));
    json out = defaults;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        require(defaults.contains(it.key()), ErrorKind::config, "unknown config key: " + key);
        const json& dv = defaults.at(it.key());
        const json& uv = it.value();
        if (dv.is_object()) {
            out[it.key()] = merge_config(dv, uv, key);
            continue;
        }
        const bool ok = (dv.is_number() && uv.is_number()) ||
                        (dv.is_boolean() && uv.is_boolean()) ||
                        (dv.is_string() && uv.is_string()) || (dv.is_array() && uv.is_array());
        require(ok, ErrorKind::config, "config key " + key + " expects " + type_name(dv) +
                                           ", got " + type_name(uv));
        out[it.key()] = uv;
    }
    return out;
}

static void validate_pipeline(const PipelineConfig& cfg) {
    validate_dataset_config(cfg.data);
    validate_codec_config(cfg.codec);
    validate_denoiser_config(cfg.denoiser);
    validate_train_config(cfg.train_codec);
    validate_train_config(cfg.train_stage1);
    validate_train_config(cfg.train_stage2);
    require(cfg.codec.latent_channels == cfg.denoiser.latent_channels, ErrorKind::config,
            "denoiser.latent_channels must match codec.latent_channels");
    require(cfg.codec.tonemapped == cfg.data.tonemapped, ErrorKind::config,
            "codec.tonemapped must match data.tonemapped");
    require(cfg.infer.steps >= 1 && cfg.infer.steps <= cfg.denoiser.diff_steps, ErrorKind::config,
            "infer.steps must lie in [1, denoiser.diff_steps]");
    require(cfg.infer.stage2_data_steps >= 1 &&
                cfg.infer.stage2_data_steps <= cfg.denoiser.diff_steps,
            ErrorKind::config, "infer.stage2_data_steps must lie in [1, denoiser.diff_steps]");
    require(cfg.eval.max_samples >= 0, ErrorKind::config, "eval.max_samples must be >= 0");
}

LoadedConfig load_pipeline_config(const std::string& file, const json& overrides) {
    json merged = pipeline_config_to_json(default_pipeline_config());
    if (!file.empty()) {
        require(std::filesystem::exists(file), ErrorKind::config, "config file not found: " + file);
        json user;
        try {
            user = read_json_file(file);
        } catch (const Error& e) {
            raise(ErrorKind::config, e.what());
        }
        merged = merge_config(merged, user);
    }
    if (overrides.is_object() && !overrides.empty()) merged = merge_config(merged, overrides);
    LoadedConfig out;
    out.cfg = pipeline_config_from_json(merged);
    validate_pipeline(out.cfg);
    out.canonical = pipeline_config_to_json(out.cfg);
    out.hash = json_hash(out.canonical);
    return out;
}

} // namespace flashsplit
