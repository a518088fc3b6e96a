#pragma once

#include <string>
#include <vector>

#include "flashsplit/core/json_util.hpp"
#include "flashsplit/scene/scene.hpp"

namespace flashsplit {

struct DatasetConfig {
    SceneConfig scene;
    int count = 100;
    uint64_t seed = 1;
    bool tonemapped = false;
    double train_frac = 0.8, val_frac = 0.1; // remainder is the test split
    double eval_warp_max = 6.0;   // misalignment recorded on val/test pairs
    double eval_warp_jitter = 0.75;
};

void validate_dataset_config(const DatasetConfig& cfg);
json scene_config_to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const json& j);
json dataset_config_to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const json& j);

struct SampleRef {
    int id = 0;
    std::string dir; // relative to the dataset root
    std::string split;
    uint64_t seed = 0;
};

struct Dataset {
    std::string root;
    json manifest;
    DatasetConfig cfg;
    std::vector<SampleRef> samples;
};

struct LoadedSample {
    int id = 0;
    std::string split;
    FlashSceneSpec spec;   // cleaned ground truth (display space when tonemapped)
    Tensor flash_aligned;
    CapturePair pair;      // recorded captures; train pairs carry identity warps
};

// Renders the whole corpus under dir and returns the manifest path. Every
// image is a 16-bit PNG of value/scale with the scale recorded in the
// sample's meta.json; bytes are reproducible for a given config.
std::string write_dataset(const std::string& dir, const DatasetConfig& cfg);

Dataset read_dataset(const std::string& root);
LoadedSample load_sample(const Dataset& ds, int id);
std::vector<int> split_ids(const Dataset& ds, const std::string& split);
uint64_t dataset_manifest_hash(const Dataset& ds);

} // namespace flashsplit
