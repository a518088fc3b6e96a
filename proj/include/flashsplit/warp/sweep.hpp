#pragma once

#include "flashsplit/eval/compare.hpp"

namespace flashsplit {

// Applies pure translations of each magnitude to the aligned flash capture,
// reruns the methods, and reports mean/std PSNR per (magnitude, method) as
// CSV plus a line chart. Magnitudes must be non-negative and strictly
// ascending; only naive_diff, prealign_diff and flash_split make sense here.
json misalignment_sweep(const Dataset& ds, const std::vector<int>& ids,
                        const std::vector<double>& magnitudes,
                        const std::vector<std::string>& methods, const LearnedStack& stack,
                        const std::string& out_dir, const json& extra = json::object());

} // namespace flashsplit
