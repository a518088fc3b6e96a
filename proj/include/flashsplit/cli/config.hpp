#pragma once

#include <string>
#include <vector>

#include "flashsplit/diffusion/denoiser.hpp"
#include "flashsplit/scene/dataset.hpp"
#include "flashsplit/train/trainer.hpp"

namespace flashsplit {

struct InferConfig {
    int steps = 50;            // DDIM steps at inference
    int stage2_data_steps = 20; // DDIM steps when generating stage-2 tuples
};

struct EvalConfig {
    std::vector<double> sweep_magnitudes = {0.0, 2.0, 4.0, 8.0};
    std::vector<std::string> methods; // empty = every method with its inputs available
    int max_samples = 0;              // 0 = the whole split
    uint64_t seed = 11;
};

struct PipelineConfig {
    DatasetConfig data;
    CodecConfig codec;
    DenoiserConfig denoiser;
    InferConfig infer;
    TrainConfig train_codec, train_stage1, train_stage2;
    EvalConfig eval;
};

PipelineConfig default_pipeline_config();
json pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const json& j);

// Overlay user json onto the defaults. Unknown keys anywhere and type
// mismatches are config errors naming the dotted path; arrays replace
// wholesale.
json merge_config(const json& defaults, const json& user, const std::string& path = "");

struct LoadedConfig {
    PipelineConfig cfg;
    json canonical;  // normalized dump of the effective config
    uint64_t hash = 0;
};

// defaults <- file (optional) <- overrides, then validate everything
LoadedConfig load_pipeline_config(const std::string& file, const json& overrides);

} // namespace flashsplit
