#pragma once

#include <vector>

#include "flashsplit/core/rng.hpp"
#include "flashsplit/core/tensor.hpp"

namespace flashsplit {

// Multi-resolution training noise: white noise at each scale is nearest
// upsampled, weighted by m^log2(scale) with m = 1 - progress * anneal, then
// the sum is divided by sqrt(sum of squared weights) so every pixel keeps
// exactly unit variance. progress 1 with anneal 1 reduces to white noise.
struct MultiResNoiseConfig {
    std::vector<int> scales = {1, 2, 4};
    double anneal = 1.0;
};

void validate_noise_config(const MultiResNoiseConfig& cfg);

Tensor sample_multires_noise(int n, int c, int h, int w, const MultiResNoiseConfig& cfg,
                             double progress, Rng& rng);

// plain white gaussian noise, the inference-time distribution
Tensor sample_white_noise(int n, int c, int h, int w, Rng& rng);

} // namespace flashsplit
