#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace chardiff::plates {

// Built-in fixed bitmap font: one 8x16 binary glyph per vocabulary symbol.
inline constexpr int kGlyphW = 8;
inline constexpr int kGlyphH = 16;

inline const std::string kFullVocab = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

struct Glyph {
  char symbol = 0;
  std::array<uint8_t, kGlyphW * kGlyphH> bits{};  // row-major, 1 = ink

  uint8_t at(int x, int y) const { return bits[static_cast<size_t>(y) * kGlyphW + x]; }

  // Tight inked extent [x0,x1) x [y0,y1).
  void inked_bbox(int& x0, int& y0, int& x1, int& y1) const;
};

bool has_glyph(char c);
const Glyph& glyph(char c);  // throws ShapeError for unknown symbols

}  // namespace chardiff::plates
