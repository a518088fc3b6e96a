#pragma once

#include <string>

#include "flashsplit/core/json_util.hpp"

namespace flashsplit {

enum class WarpKind { identity, translation, homography, parallax };

enum class WarpPad { clamp, circular };

// Geometric misalignment between flash and no-flash captures. All maps are
// stored in pull form: for an output pixel (x, y) the source location in the
// input image is computed from these parameters. Translation by (dx, dy)
// pushes image content by +(dx, dy), i.e. the pull map is (x - dx, y - dy).
struct WarpParams {
    WarpKind kind = WarpKind::identity;
    double dx = 0.0, dy = 0.0;      // translation, pixels
    double h[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1}; // homography pull map, row-major, h[8] = 1
    double shift_x = 0.0, shift_y = 0.0; // parallax camera shift, scene units
    WarpPad pad = WarpPad::clamp;
};

WarpParams translation_warp(double dx, double dy, WarpPad pad = WarpPad::clamp);
WarpParams homography_warp(const double m[9], WarpPad pad = WarpPad::clamp);
WarpParams parallax_warp(double shift_x, double shift_y, WarpPad pad = WarpPad::clamp);

// Nominal displacement magnitude in pixels (0 for identity, |d| for
// translation and parallax at unit depth, max corner displacement for
// homography on a size x size frame).
double warp_magnitude(const WarpParams& w, int size);

json warp_to_json(const WarpParams& w);
WarpParams warp_from_json(const json& j);

// Rejects non-invertible homographies and non-neutral identity params.
void validate_warp(const WarpParams& w);

} // namespace flashsplit
