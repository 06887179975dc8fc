#include "chardiff/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "chardiff/errors.hpp"

namespace chardiff {

namespace {

// Skips whitespace and '#' comments between PNM header tokens.
int next_header_int(std::istream& in, const std::string& path) {
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      in.unget();
      int v;
      if (!(in >> v)) break;
      return v;
    }
  }
  throw DataError("malformed PNM header in " + path);
}

}  // namespace

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  char p, n;
  in.get(p);
  in.get(n);
  if (p != 'P' || (n != '5' && n != '6')) throw DataError(path + " is not a binary PGM/PPM file");
  Image img;
  img.channels = (n == '5') ? 1 : 3;
  img.width = next_header_int(in, path);
  img.height = next_header_int(in, path);
  int maxval = next_header_int(in, path);
  if (maxval != 255) throw DataError(path + ": unsupported maxval " + std::to_string(maxval));
  in.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path + ": truncated pixel data");
  return img;
}

void write_image(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw DataError("write_image: unsupported channel count " + std::to_string(img.channels));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image " + path);
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("short write on " + path);
}

std::vector<float> to_float(const Image& img) {
  std::vector<float> f(img.pixels.size());
  for (size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(img.pixels[i]);
  return f;
}

Image from_float(const std::vector<float>& data, int w, int h, int ch) {
  Image img(w, h, ch);
  if (data.size() != img.pixels.size())
    throw DataError("from_float: buffer does not match image dimensions");
  for (size_t i = 0; i < data.size(); ++i) {
    float v = std::lround(data[i]);
    img.pixels[i] = static_cast<uint8_t>(v < 0.f ? 0.f : (v > 255.f ? 255.f : v));
  }
  return img;
}

}  // namespace chardiff
