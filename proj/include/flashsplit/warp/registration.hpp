#pragma once

#include "flashsplit/scene/scene.hpp"
#include "flashsplit/warp/warp.hpp"

namespace flashsplit {

struct TranslationEstimate {
    double dx = 0.0, dy = 0.0; // b is a pushed by (dx, dy)
    double response = 0.0;     // correlation peak height, larger is sharper
};

// FFT phase correlation over channel-mean images with parabolic sub-pixel
// refinement. Near-constant inputs (variance < 1e-12) are degenerate.
TranslationEstimate estimate_translation(const Tensor& a, const Tensor& b);

struct PrealignResult {
    Tensor diff;  // max(realigned_flash - no_flash, 0)
    Tensor mask;  // valid = realignment source inside frame and capture mask
    TranslationEstimate estimate;
};

// Classical baseline: estimate the flash shift, undo it with a translation
// warp, then take the clamped difference.
PrealignResult baseline_prealign_difference(const CapturePair& p);

} // namespace flashsplit
