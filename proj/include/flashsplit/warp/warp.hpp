#pragma once

#include "flashsplit/core/rng.hpp"
#include "flashsplit/scene/scene.hpp"
#include "flashsplit/warp/warp_params.hpp"

namespace flashsplit {

struct Warped {
    Tensor img;
    Tensor mask; // [1,1,H,W], 1 where the pull source fell inside the frame
};

// Resample img under the warp's pull map with bilinear interpolation.
// Identity returns a bit-exact copy; integer translations are exact index
// remaps. Parallax needs depth ([1,1,H,W], sampled at the output pixel;
// source = out - shift / depth).
Warped apply_warp(const Tensor& img, const WarpParams& w, const Tensor* depth = nullptr);

// Compose both captures and misalign the flash one.
CapturePair make_misaligned_pair(const FlashSceneSpec& spec, const WarpParams& w);

// Translation of magnitude U[0, max_translation] at a uniform random angle;
// with jitter_px > 0 the four frame corners are additionally perturbed by
// U[-jitter_px, jitter_px] each and the result is returned as a homography.
WarpParams random_misalignment(Rng& rng, double max_translation, double jitter_px, int size);

// pull-map source location for an output pixel, exposed for tests
void warp_source(const WarpParams& w, double x, double y, double depth_at, double* sx, double* sy);

} // namespace flashsplit
