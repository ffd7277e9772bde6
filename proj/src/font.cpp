#include "inkwell/font.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace inkwell {

namespace {

constexpr Glyph kLetters[26] = {
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // A
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
    {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},  // D
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // G
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // H
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // I
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // J
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // K
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // L
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // M
    {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},  // N
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // O
    {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // P
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // Q
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // R
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // S
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // T
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // U
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // V
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // W
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // X
    {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04},  // Y
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // Z
};

constexpr Glyph kDigits[10] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

constexpr std::size_t kGlyphW = 5, kGlyphH = 7, kMargin = 2;

}  // namespace

std::optional<Glyph> glyph(char c) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u >= 'A' && u <= 'Z') return kLetters[u - 'A'];
  if (u >= '0' && u <= '9') return kDigits[u - '0'];
  switch (u) {
    case ' ': return Glyph{0, 0, 0, 0, 0, 0, 0};
    case '.': return Glyph{0, 0, 0, 0, 0, 0x0C, 0x0C};
    case '-': return Glyph{0, 0, 0, 0x1F, 0, 0, 0};
    case '!': return Glyph{0x04, 0x04, 0x04, 0x04, 0x04, 0, 0x04};
    case '?': return Glyph{0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04};
    case ':': return Glyph{0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0};
    case '/': return Glyph{0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10};
    default: return std::nullopt;
  }
}

Tensor render_text(const std::string& text, std::size_t height, std::size_t width, std::size_t channels) {
  if (height == 0 || width == 0 || channels == 0) throw std::invalid_argument("render_text: empty image size");
  Tensor img({channels, height, width}, 1.0f);
  if (text.empty()) return img;
  std::vector<Glyph> glyphs;
  for (char c : text) {
    auto g = glyph(c);
    if (!g) throw std::invalid_argument(std::string("render_text: no glyph for '") + c + "'");
    glyphs.push_back(*g);
  }

  const double avail_h = static_cast<double>(height > 2 * kMargin ? height - 2 * kMargin : height);
  const double avail_w = static_cast<double>(width > 2 * kMargin ? width - 2 * kMargin : width);
  std::size_t best_lines = 1, best_cpl = glyphs.size();
  double best_scale = 0.0;
  for (std::size_t lines = 1; lines <= glyphs.size(); ++lines) {
    const std::size_t cpl = (glyphs.size() + lines - 1) / lines;
    const double bw = static_cast<double>(cpl * (kGlyphW + 1) - 1);
    const double bh = static_cast<double>(lines * (kGlyphH + 1) - 1);
    const double scale = std::min(avail_w / bw, avail_h / bh);
    if (scale > best_scale) best_scale = scale, best_lines = lines, best_cpl = cpl;
  }
  if (best_scale < 1.0) throw std::invalid_argument("render_text: '" + text + "' does not fit the image");

  // Text block in font units, then nearest-neighbor scaled into the image.
  const std::size_t bw = best_cpl * (kGlyphW + 1) - 1, bh = best_lines * (kGlyphH + 1) - 1;
  std::vector<std::uint8_t> block(bw * bh, 0);
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    const std::size_t line = i / best_cpl, col = i % best_cpl;
    for (std::size_t r = 0; r < kGlyphH; ++r)
      for (std::size_t c = 0; c < kGlyphW; ++c)
        if (glyphs[i][r] & (1u << (kGlyphW - 1 - c)))
          block[(line * (kGlyphH + 1) + r) * bw + col * (kGlyphW + 1) + c] = 1;
  }
  const auto out_h = static_cast<std::size_t>(std::floor(static_cast<double>(bh) * best_scale));
  const auto out_w = static_cast<std::size_t>(std::floor(static_cast<double>(bw) * best_scale));
  const std::size_t y0 = (height - out_h) / 2, x0 = (width - out_w) / 2;
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto by = std::min(bh - 1, static_cast<std::size_t>(static_cast<double>(y) / best_scale));
      const auto bx = std::min(bw - 1, static_cast<std::size_t>(static_cast<double>(x) / best_scale));
      if (block[by * bw + bx])
        for (std::size_t ch = 0; ch < channels; ++ch) img[(ch * height + y0 + y) * width + x0 + x] = 0.0f;
    }
  return img;
}

}  // namespace inkwell
