#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace chardiff {

// 8-bit image, row-major, channel-interleaved. channels is 1 (PGM) or 3 (PPM).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int ch = 1, uint8_t fill = 0)
      : width(w), height(h), channels(ch),
        pixels(static_cast<size_t>(w) * h * ch, fill) {}

  uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
};

// Binary PGM (P5) / PPM (P6), maxval 255. Round-trips bit-exactly.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

// Float plane in [0,255] used by the degradation pipeline and metrics.
std::vector<float> to_float(const Image& img);
Image from_float(const std::vector<float>& data, int w, int h, int ch = 1);

}  // namespace chardiff
