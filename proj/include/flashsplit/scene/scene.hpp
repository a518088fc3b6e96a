#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flashsplit/core/rng.hpp"
#include "flashsplit/core/tensor.hpp"
#include "flashsplit/warp/warp_params.hpp"

namespace flashsplit {

struct SceneConfig {
    int size = 64;
    int channels = 3;
    std::vector<std::string> textures = {"gradients", "shapes", "glyphs"};
    double gamma_lo = 0.2, gamma_hi = 0.8;   // reflection attenuation range
    double theta_lo = 0.5, theta_hi = 2.0;   // flash boost range
    bool per_pixel_gamma = false;
    bool flash_falloff = false;              // radial falloff on theta
    double blur_sigma = 0.65;
    double brightness_lo = 0.7, brightness_hi = 1.0; // per-layer peak value
    double depth_lo = 1.0, depth_hi = 3.0;
};

// Ground-truth scene in linear radiance. Layers are [1,C,H,W] with peak
// close to brightness; gamma and theta are [1,1,1,1] scalars or [1,1,H,W]
// maps.
struct FlashSceneSpec {
    Tensor transmission;
    Tensor reflection;
    Tensor depth; // [1,1,H,W], strictly positive, transmission-layer depth
    Tensor gamma;
    Tensor theta;
    uint64_t seed = 0;
};

// Observed capture pair. flash carries the recorded misalignment applied to
// the aligned flash composite; flash_mask marks pixels whose warp source
// fell inside the frame.
struct CapturePair {
    Tensor no_flash;
    Tensor flash;
    Tensor flash_mask; // [1,1,H,W], 1 = valid
    WarpParams misalignment;
    bool tonemapped = false;
    uint64_t scene_seed = 0;
};

FlashSceneSpec generate_scene(uint64_t seed, const SceneConfig& cfg);
void validate_scene(const FlashSceneSpec& s);

// no-flash composite: T + gamma * R
Tensor compose_no_flash(const FlashSceneSpec& s);
// aligned flash composite: (1 + theta) * T + gamma * R
Tensor compose_flash(const FlashSceneSpec& s);
// flash-only transmission term: theta * T (the target of difference methods)
Tensor flash_term(const FlashSceneSpec& s);

// max(flash - no_flash, 0); rejects tonemapped pairs, the subtraction is
// only meaningful in linear radiance.
Tensor flash_difference(const CapturePair& p);

// clip to [0,1] then gamma-compress with exponent 1/2.2
Tensor tonemap(const Tensor& linear);
// inverse of tonemap on [0,1]
Tensor untonemap(const Tensor& display);

// convolve with a small Gaussian (reflect padding); exposed for tests
Tensor gaussian_blur(const Tensor& img, double sigma);

void validate_scene_config(const SceneConfig& cfg);

} // namespace flashsplit
