#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chardiff/glyphs.hpp"
#include "chardiff/image.hpp"

namespace chardiff::plates {

// Axis-aligned half-open pixel rectangle [x0,x1) x [y0,y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool operator==(const Box&) const = default;
};

struct PlateStyle {
  int width = 96;
  int height = 48;
  int channels = 1;
  std::string vocab = kFullVocab;
  int min_len = 5;
  int max_len = 6;
  int cell_w = 12;  // glyph raster cell; integer multiples of 8x16 keep the
  int cell_h = 24;  // OCR template match exact on clean renders
  int spacing = 2;
  int margin = 2;
  int box_pad = 0;
  int bg_min = 170, bg_max = 235;
  int fg_min = 10, fg_max = 70;
  int min_contrast = 80;
  int jitter_x = 2;
  int jitter_y = 1;

  void validate() const;  // throws UsageError
};

struct PlateSample {
  std::string id;
  std::string label;
  Image hq;
  std::vector<Box> boxes;
  uint64_t seed = 0;
};

// Deterministic for fixed (label, style, seed); boxes bound each glyph's
// inked pixels plus style.box_pad.
PlateSample render_plate(const std::string& label, const PlateStyle& style, uint64_t seed);

struct ManifestRecord {
  std::string id;
  std::optional<std::string> hq_path;
  std::optional<std::string> lq_path;
  std::string label;
  std::vector<Box> boxes;
  uint64_t seed = 0;
};

using Manifest = std::vector<ManifestRecord>;

void write_manifest(const std::string& path, const Manifest& records);
Manifest read_manifest(const std::string& path);  // strict: unknown keys rejected

struct DatasetConfig {
  PlateStyle style;
  int count = 0;
  std::array<int, 3> split{7, 2, 1};  // train : val : test
  std::string out_dir;
};

struct DatasetResult {
  Manifest train, val, test;
  std::string dir;
};

// Renders `count` plates, splits them deterministically by id hash using the
// largest-remainder rule, writes hq/<id>.pgm plus one manifest per split.
// On I/O failure all partially written outputs are removed before rethrow.
DatasetResult generate_dataset(const DatasetConfig& cfg, uint64_t seed);

// Re-segments a clean render by 4-connected inked components; the test
// oracle for box geometry and the substrate of projection-mode fallbacks.
std::vector<Box> connected_component_boxes(const Image& img, int threshold);

}  // namespace chardiff::plates
