#pragma once

#include "flashsplit/codec/codec.hpp"

namespace flashsplit {

// Decoder conditioned on the observed composite: a copy of the codec
// encoder feeds zero-initialized 1x1 skip projections into the matching
// decoder resolutions (full and half, never the latent bottleneck), so at
// initialization its output equals the plain codec decode bit for bit.
struct CrossDecoderState {
    CodecConfig cfg;
    ParamStore params;
    std::vector<double> lat_mean, lat_std;
    std::string target; // "transmission" or "reflection"
    bool trained = false;
};

CrossDecoderState cross_decoder_init(const CodecState& codec, const std::string& target);

int cross_decode_graph(Bind& b, const CrossDecoderState& st, int lat, int composite,
                       bool clamp_output = true);

Tensor cross_latent_decode(const CrossDecoderState& st, const Tensor& lat, const Tensor& composite);

void save_cross_decoder(const std::string& path, const CrossDecoderState& st, const json& meta);
CrossDecoderState load_cross_decoder(const std::string& path);

} // namespace flashsplit
