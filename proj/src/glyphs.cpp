#include "chardiff/glyphs.hpp"

#include <map>

#include "chardiff/errors.hpp"

namespace chardiff::plates {

namespace {

// Glyph artwork: 12 body rows of 8 columns; rows 0-1 and 14-15 of the cell
// stay blank. Every glyph must be a single 4-connected component (the
// renderer's box oracle segments by connected components) and nonzero.
struct Art {
  char symbol;
  const char* rows[12];
};

constexpr Art kArt[] = {
    {'A',
     {"..####..", ".######.", ".##..##.", ".##..##.", ".##..##.", ".######.", ".######.",
      ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##."}},
    {'B',
     {".#####..", ".######.", ".##..##.", ".##..##.", ".#####..", ".#####..", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".######.", ".#####.."}},
    {'C',
     {"..####..", ".######.", ".##..##.", ".##.....", ".##.....", ".##.....", ".##.....",
      ".##.....", ".##.....", ".##..##.", ".######.", "..####.."}},
    {'D',
     {".#####..", ".######.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".######.", ".#####.."}},
    {'E',
     {".######.", ".######.", ".##.....", ".##.....", ".#####..", ".#####..", ".##.....",
      ".##.....", ".##.....", ".##.....", ".######.", ".######."}},
    {'F',
     {".######.", ".######.", ".##.....", ".##.....", ".#####..", ".#####..", ".##.....",
      ".##.....", ".##.....", ".##.....", ".##.....", ".##....."}},
    {'G',
     {"..####..", ".######.", ".##..##.", ".##.....", ".##.....", ".##.###.", ".##.###.",
      ".##..##.", ".##..##.", ".##..##.", ".######.", "..####.."}},
    {'H',
     {".##..##.", ".##..##.", ".##..##.", ".##..##.", ".######.", ".######.", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##."}},
    {'I',
     {".######.", ".######.", "...##...", "...##...", "...##...", "...##...", "...##...",
      "...##...", "...##...", "...##...", ".######.", ".######."}},
    {'J',
     {".######.", ".######.", "....##..", "....##..", "....##..", "....##..", "....##..",
      "....##..", ".##.##..", ".##.##..", ".#####..", "..###..."}},
    {'K',
     {".##..##.", ".##..##.", ".##.##..", ".##.##..", ".####...", ".####...", ".####...",
      ".##.##..", ".##.##..", ".##..##.", ".##..##.", ".##..##."}},
    {'L',
     {".##.....", ".##.....", ".##.....", ".##.....", ".##.....", ".##.....", ".##.....",
      ".##.....", ".##.....", ".##.....", ".######.", ".######."}},
    {'M',
     {".######.", ".######.", ".###.##.", ".###.##.", ".###.##.", ".###.##.", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##."}},
    {'N',
     {".##..##.", ".##..##.", ".###.##.", ".###.##.", ".###.##.", ".######.", ".##.###.",
      ".##.###.", ".##.###.", ".##..##.", ".##..##.", ".##..##."}},
    {'O',
     {"..####..", ".######.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".######.", "..####.."}},
    {'P',
     {".#####..", ".######.", ".##..##.", ".##..##.", ".######.", ".#####..", ".##.....",
      ".##.....", ".##.....", ".##.....", ".##.....", ".##....."}},
    {'Q',
     {"..####..", ".######.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.",
      ".##..##.", ".##.###.", ".##.###.", ".######.", "..#####."}},
    {'R',
     {".#####..", ".######.", ".##..##.", ".##..##.", ".######.", ".#####..", ".####...",
      ".##.##..", ".##.##..", ".##..##.", ".##..##.", ".##..##."}},
    {'S',
     {"..#####.", ".######.", ".##.....", ".##.....", ".#####..", "..#####.", ".....##.",
      ".....##.", ".##..##.", ".##..##.", ".######.", ".#####.."}},
    {'T',
     {".######.", ".######.", "...##...", "...##...", "...##...", "...##...", "...##...",
      "...##...", "...##...", "...##...", "...##...", "...##..."}},
    {'U',
     {".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".######.", "..####.."}},
    {'V',
     {".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.",
      ".##..##.", "..####..", "..####..", "...##...", "...##..."}},
    {'W',
     {".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##.###.", ".##.###.",
      ".##.###.", ".##.###.", ".##.###.", ".######.", ".######."}},
    {'X',
     {".##..##.", ".##..##.", ".##..##.", "..####..", "..####..", "...##...", "...##...",
      "..####..", "..####..", ".##..##.", ".##..##.", ".##..##."}},
    {'Y',
     {".##..##.", ".##..##.", ".##..##.", "..####..", "..####..", "...##...", "...##...",
      "...##...", "...##...", "...##...", "...##...", "...##..."}},
    {'Z',
     {".######.", ".######.", "....##..", "....##..", "...##...", "...##...", "..##....",
      "..##....", ".##.....", ".##.....", ".######.", ".######."}},
    {'0',
     {"..####..", ".######.", ".##..##.", ".##..##.", ".##.###.", ".##.###.", ".###.##.",
      ".###.##.", ".##..##.", ".##..##.", ".######.", "..####.."}},
    {'1',
     {"...##...", "..###...", ".####...", "...##...", "...##...", "...##...", "...##...",
      "...##...", "...##...", "...##...", ".######.", ".######."}},
    {'2',
     {"..####..", ".######.", ".##..##.", ".....##.", "....###.", "...###..", "..###...",
      ".###....", ".##.....", ".##.....", ".######.", ".######."}},
    {'3',
     {"..####..", ".######.", ".##..##.", ".....##.", "...####.", "...####.", ".....##.",
      ".....##.", ".##..##.", ".##..##.", ".######.", "..####.."}},
    {'4',
     {".##..##.", ".##..##.", ".##..##.", ".##..##.", ".######.", ".######.", "....##..",
      "....##..", "....##..", "....##..", "....##..", "....##.."}},
    {'5',
     {".######.", ".######.", ".##.....", ".##.....", ".#####..", ".######.", ".....##.",
      ".....##.", ".....##.", ".##..##.", ".######.", "..####.."}},
    {'6',
     {"..####..", ".#####..", ".##.....", ".##.....", ".#####..", ".######.", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".######.", "..####.."}},
    {'7',
     {".######.", ".######.", ".....##.", ".....##.", "....##..", "....##..", "...##...",
      "...##...", "..##....", "..##....", "..##....", "..##...."}},
    {'8',
     {"..####..", ".######.", ".##..##.", ".##..##.", "..####..", "..####..", ".##..##.",
      ".##..##.", ".##..##.", ".##..##.", ".######.", "..####.."}},
    {'9',
     {"..####..", ".######.", ".##..##.", ".##..##.", ".######.", "..#####.", ".....##.",
      ".....##.", ".....##.", ".....##.", ".#####..", ".####..."}},
};

std::map<char, Glyph> build_atlas() {
  std::map<char, Glyph> atlas;
  for (const Art& a : kArt) {
    Glyph g;
    g.symbol = a.symbol;
    for (int r = 0; r < 12; ++r) {
      const char* row = a.rows[r];
      for (int c = 0; c < kGlyphW && row[c]; ++c)
        g.bits[static_cast<size_t>(r + 2) * kGlyphW + c] = (row[c] == '#') ? 1 : 0;
    }
    atlas[a.symbol] = g;
  }
  return atlas;
}

const std::map<char, Glyph>& atlas() {
  static const std::map<char, Glyph> a = build_atlas();
  return a;
}

}  // namespace

void Glyph::inked_bbox(int& x0, int& y0, int& x1, int& y1) const {
  x0 = kGlyphW;
  y0 = kGlyphH;
  x1 = 0;
  y1 = 0;
  for (int y = 0; y < kGlyphH; ++y)
    for (int x = 0; x < kGlyphW; ++x)
      if (at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x + 1);
        y1 = std::max(y1, y + 1);
      }
}

bool has_glyph(char c) { return atlas().count(c) > 0; }

const Glyph& glyph(char c) {
  auto it = atlas().find(c);
  if (it == atlas().end())
    throw ShapeError(std::string("no glyph for character '") + c + "'");
  return it->second;
}

}  // namespace chardiff::plates
