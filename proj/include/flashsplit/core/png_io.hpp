#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flashsplit/core/tensor.hpp"

namespace flashsplit {

// 16-bit PNG round trip for [1,C,H,W] tensors with C in {1,3}. Values are
// clipped to [0,1] and quantized to uint16; compression settings are pinned
// so identical tensors always produce identical bytes.
void write_png16(const std::string& path, const Tensor& img);
Tensor read_png16(const std::string& path);

// 8-bit RGB writer for rendered charts. rgb is row-major H*W*3.
void write_png8(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height);

} // namespace flashsplit
