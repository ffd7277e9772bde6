#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "inkwell/tensor.hpp"

namespace inkwell {

// 5x7 bitmap glyph; row r, bit (4 - c) set means column c is inked.
using Glyph = std::array<std::uint8_t, 7>;

// Glyphs for A-Z, 0-9, space and . - ! ? : /; lowercase maps to uppercase.
std::optional<Glyph> glyph(char c);

// Renders `text` as black (0) glyphs on white (1), centered in a
// (channels, height, width) image. The text is wrapped onto the number of
// lines that gives the largest nearest-neighbor scale. Throws
// std::invalid_argument for characters without a glyph or text that does not
// fit at scale >= 1.
Tensor render_text(const std::string& text, std::size_t height, std::size_t width, std::size_t channels = 1);

}  // namespace inkwell
