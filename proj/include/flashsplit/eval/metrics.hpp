#pragma once

#include <vector>

#include "flashsplit/core/tensor.hpp"

namespace flashsplit {

// Peak signal-to-noise ratio in dB over [1,C,H,W] images, clamped to
// [0, 60]; zero MSE reports the 60 dB cap. mask: optional [1,1,H,W] with
// 1 = valid; invalid pixels are excluded from the MSE.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0, const Tensor* mask = nullptr);

// Gaussian-window SSIM (window x window, sigma 1.5), averaged over valid
// window positions and channels. With a mask, windows touching any invalid
// pixel are excluded.
double ssim(const Tensor& a, const Tensor& b, int window = 11, double k1 = 0.01, double k2 = 0.03,
            double peak = 1.0, const Tensor* mask = nullptr);

// Normalized (sums to 1) separable Gaussian taps used by both the SSIM
// metric and the differentiable SSIM loss.
std::vector<double> gaussian_taps(int size, double sigma);

} // namespace flashsplit
