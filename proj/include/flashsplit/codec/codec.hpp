#pragma once

#include <string>
#include <vector>

#include "flashsplit/core/bind.hpp"
#include "flashsplit/core/json_util.hpp"

namespace flashsplit {

struct CodecConfig {
    int image_channels = 3;
    int width = 32;        // base conv width
    int factor = 4;        // spatial downsample, fixed at 4 (two stride-2 stages)
    int latent_channels = 4;
    bool tonemapped = false;
    double max_scale = 4.0; // decode ceiling in linear-radiance mode
};

void validate_codec_config(const CodecConfig& cfg);
json codec_config_to_json(const CodecConfig& cfg);
CodecConfig codec_config_from_json(const json& j);

// Convolutional autoencoder mapping [N,C,H,W] images to [N,c,H/4,W/4]
// latents. Latents leave encode() standardized per channel with stats fitted
// on the training split after optimization.
struct CodecState {
    CodecConfig cfg;
    ParamStore params;
    std::vector<double> lat_mean, lat_std;
    bool trained = false;
};

CodecState codec_init(const CodecConfig& cfg, uint64_t seed);

// graph builders shared by inference and training; standardize toggles the
// fitted per-channel affine on the latent side
int encode_graph(Bind& b, const CodecState& st, int img, bool standardize = true);
int decode_graph(Bind& b, const CodecState& st, int lat, bool standardize = true,
                 bool clamp_output = true);

Tensor encode(const CodecState& st, const Tensor& img);
Tensor decode(const CodecState& st, const Tensor& lat);

void save_codec(const std::string& path, const CodecState& st, const json& meta);
CodecState load_codec(const std::string& path);

} // namespace flashsplit
