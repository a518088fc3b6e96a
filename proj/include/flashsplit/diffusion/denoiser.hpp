#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flashsplit/codec/codec.hpp"
#include "flashsplit/diffusion/noise.hpp"
#include "flashsplit/diffusion/schedule.hpp"
#include "flashsplit/scene/scene.hpp"

namespace flashsplit {

struct DenoiserConfig {
    int latent_channels = 4;
    int width = 32;   // base channel width, even (sinusoidal features pair up)
    int groups = 8;   // group-norm group cap
    int diff_steps = 1000;
    double beta_start = 1e-4, beta_end = 0.02;
    std::string schedule_kind = "linear";
    MultiResNoiseConfig noise;
};

void validate_denoiser_config(const DenoiserConfig& cfg);
json denoiser_config_to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const json& j);

// Two-branch latent-noise predictor. Each branch sees its own noisy latent
// concatenated with both capture latents, runs its own weights, and talks to
// the other branch only through mid-block cross-attention whose query and
// output projections start at exactly zero, so a fresh model matches the
// exchange-disabled forward bit for bit.
struct DualDenoiserState {
    DenoiserConfig cfg;
    ParamStore params;
    bool trained = false;
    bool single_image = false; // trained with the flash latent replaced by no-flash
    bool tonemapped = false;
};

DualDenoiserState denoiser_init(const DenoiserConfig& cfg, uint64_t seed);

// sinusoidal step features, [N, dim, 1, 1], dim even
Tensor timestep_features(const std::vector<int>& t_steps, int dim);

struct DenoiserOut {
    int eps_t = -1, eps_r = -1;
};

DenoiserOut denoiser_graph(Bind& b, const DualDenoiserState& st, int noisy_t, int noisy_r,
                           int z_flash, int z_noflash, int tfeat, bool cross_attention = true);

std::pair<Tensor, Tensor> denoiser_forward(const DualDenoiserState& st, const Tensor& noisy_t,
                                           const Tensor& noisy_r, const Tensor& z_flash,
                                           const Tensor& z_noflash, const std::vector<int>& t_steps,
                                           bool cross_attention = true);

struct SeparatedLatents {
    Tensor lat_t, lat_r; // standardized latents, one batch row per input pair
};

// Full stage-1 sampling: encode the captures, run the DDIM grid from pure
// noise, return both separated latents. Pairs are batched; row i depends
// only on pair i and seeds[i].
SeparatedLatents separate(const DualDenoiserState& st, const CodecState& codec,
                          const std::vector<const CapturePair*>& pairs, int steps,
                          const std::vector<uint64_t>& seeds);

void save_denoiser(const std::string& path, const DualDenoiserState& st, const json& meta);
DualDenoiserState load_denoiser(const std::string& path);

} // namespace flashsplit
