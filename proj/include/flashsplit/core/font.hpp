#pragma once

#include <cstdint>

namespace flashsplit {

// 5x7 bitmap font, one byte per row, bit 4 = leftmost column. Covers digits,
// uppercase letters and the punctuation the chart labels need; lowercase maps
// to uppercase, anything else renders as a blank cell.
// Returns nullptr for unknown characters.
const uint8_t* glyph5x7(char ch);

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;

} // namespace flashsplit
