#include "chardiff/degrade.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "chardiff/errors.hpp"

namespace chardiff::degrade {

StageKind stage_kind_from_string(const std::string& name) {
  if (name == "perspective") return StageKind::perspective;
  if (name == "contrast") return StageKind::contrast;
  if (name == "motion_blur") return StageKind::motion_blur;
  if (name == "gaussian_blur") return StageKind::gaussian_blur;
  if (name == "resample") return StageKind::resample;
  if (name == "gaussian_noise") return StageKind::gaussian_noise;
  if (name == "block_quantize") return StageKind::block_quantize;
  throw UsageError("degrade: unknown stage kind '" + name + "'");
}

std::string to_string(StageKind kind) {
  switch (kind) {
    case StageKind::perspective: return "perspective";
    case StageKind::contrast: return "contrast";
    case StageKind::motion_blur: return "motion_blur";
    case StageKind::gaussian_blur: return "gaussian_blur";
    case StageKind::resample: return "resample";
    case StageKind::gaussian_noise: return "gaussian_noise";
    case StageKind::block_quantize: return "block_quantize";
  }
  return "?";
}

void DegradeConfig::validate() const {
  if (orders < 1) throw UsageError("degrade: orders must be >= 1");
  for (const auto& s : stages) {
    if (s.probability < 0.0 || s.probability > 1.0)
      throw UsageError("degrade: stage " + to_string(s.kind) + " probability outside [0,1]");
    if (s.lo > s.hi)
      throw UsageError("degrade: stage " + to_string(s.kind) + " has degenerate range");
    if (s.aux_lo > s.aux_hi)
      throw UsageError("degrade: stage " + to_string(s.kind) + " has degenerate aux range");
    if (s.kind == StageKind::motion_blur && s.lo < 1)
      throw UsageError("degrade: motion_blur length must be >= 1");
    if (s.kind == StageKind::resample && s.lo < 1.0)
      throw UsageError("degrade: resample factor must be >= 1");
    if (s.kind == StageKind::block_quantize && (s.lo < 1 || s.hi > 100))
      throw UsageError("degrade: block_quantize quality must be in [1,100]");
  }
}

DegradeConfig DegradeConfig::defaults() {
  DegradeConfig cfg;
  cfg.orders = 2;
  cfg.stages = {
      {StageKind::perspective, 0.4, 0.008, 0.02, 0, 0},
      {StageKind::contrast, 0.5, 0.7, 1.15, 0, 0},
      {StageKind::motion_blur, 0.3, 3, 4, 0, 180},
      {StageKind::gaussian_blur, 0.5, 0.4, 0.9, 0, 0},
      {StageKind::resample, 0.6, 1.2, 1.8, 0, 0},
      {StageKind::gaussian_noise, 0.8, 2.5, 7, 0, 0},
      {StageKind::block_quantize, 0.25, 40, 75, 0, 0},
  };
  return cfg;
}

namespace {

inline float clamp255(float v) { return v < 0.f ? 0.f : (v > 255.f ? 255.f : v); }

float border_mean(const std::vector<float>& d, int w, int h, int ch, int c) {
  double sum = 0;
  long count = 0;
  auto px = [&](int x, int y) { return d[(static_cast<size_t>(y) * w + x) * ch + c]; };
  for (int x = 0; x < w; ++x) {
    sum += px(x, 0) + px(x, h - 1);
    count += 2;
  }
  for (int y = 1; y < h - 1; ++y) {
    sum += px(0, y) + px(w - 1, y);
    count += 2;
  }
  return static_cast<float>(sum / static_cast<double>(count));
}

// Homography from 4 point correspondences via an 8x8 solve.
struct Homography {
  std::array<double, 9> m{};
  void map(double x, double y, double& u, double& v) const {
    double d = m[6] * x + m[7] * y + m[8];
    u = (m[0] * x + m[1] * y + m[2]) / d;
    v = (m[3] * x + m[4] * y + m[5]) / d;
  }
};

Homography solve_homography(const std::array<std::pair<double, double>, 4>& src,
                            const std::array<std::pair<double, double>, 4>& dst) {
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    double x = src[i].first, y = src[i].second;
    double u = dst[i].first, v = dst[i].second;
    double* r1 = a[2 * i];
    double* r2 = a[2 * i + 1];
    r1[0] = x; r1[1] = y; r1[2] = 1; r1[6] = -u * x; r1[7] = -u * y; r1[8] = u;
    r2[3] = x; r2[4] = y; r2[5] = 1; r2[6] = -v * x; r2[7] = -v * y; r2[8] = v;
  }
  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    if (std::abs(a[col][col]) < 1e-12) throw NumericError("perspective: singular homography");
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      double f = a[r][col] / a[col][col];
      for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Homography hm;
  for (int i = 0; i < 8; ++i) hm.m[static_cast<size_t>(i)] = a[i][8] / a[i][i];
  hm.m[8] = 1.0;
  return hm;
}

void stage_perspective(std::vector<float>& d, int w, int h, int ch, double frac, Rng& rng) {
  std::array<std::pair<double, double>, 4> rect = {
      {{0, 0}, {static_cast<double>(w), 0}, {static_cast<double>(w), static_cast<double>(h)}, {0, static_cast<double>(h)}}};
  std::array<std::pair<double, double>, 4> jittered;
  for (int i = 0; i < 4; ++i) {
    double dx = rng.uniform(-frac, frac) * w;
    double dy = rng.uniform(-frac, frac) * h;
    jittered[i] = {rect[i].first + dx, rect[i].second + dy};
  }
  Homography hm = solve_homography(rect, jittered);

  std::vector<float> out(d.size());
  std::vector<float> fill(static_cast<size_t>(ch));
  for (int c = 0; c < ch; ++c) fill[c] = border_mean(d, w, h, ch, c);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double u, v;
      hm.map(x + 0.5, y + 0.5, u, v);
      u -= 0.5;
      v -= 0.5;
      int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      double fx = u - x0, fy = v - y0;
      for (int c = 0; c < ch; ++c) {
        auto sample = [&](int sx, int sy) -> double {
          if (sx < 0 || sy < 0 || sx >= w || sy >= h) return fill[c];
          return d[(static_cast<size_t>(sy) * w + sx) * ch + c];
        };
        double val = (1 - fx) * (1 - fy) * sample(x0, y0) + fx * (1 - fy) * sample(x0 + 1, y0) +
                     (1 - fx) * fy * sample(x0, y0 + 1) + fx * fy * sample(x0 + 1, y0 + 1);
        out[(static_cast<size_t>(y) * w + x) * ch + c] = static_cast<float>(val);
      }
    }
  d = std::move(out);
}

void stage_contrast(std::vector<float>& d, double factor) {
  for (auto& v : d) v = clamp255(static_cast<float>((v - 127.5) * factor + 127.5));
}

void convolve_replicate(std::vector<float>& d, int w, int h, int ch, const Kernel& k) {
  std::vector<float> out(d.size(), 0.f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0;
        for (int ky = 0; ky < k.h; ++ky)
          for (int kx = 0; kx < k.w; ++kx) {
            double kv = k.at(kx, ky);
            if (kv == 0.0) continue;
            int sx = std::clamp(x + kx - k.cx, 0, w - 1);
            int sy = std::clamp(y + ky - k.cy, 0, h - 1);
            acc += kv * d[(static_cast<size_t>(sy) * w + sx) * ch + c];
          }
        out[(static_cast<size_t>(y) * w + x) * ch + c] = static_cast<float>(acc);
      }
  d = std::move(out);
}

std::vector<double> gaussian_kernel_1d(double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

void stage_gaussian_blur(std::vector<float>& d, int w, int h, int ch, double sigma) {
  auto k = gaussian_kernel_1d(sigma);
  int radius = (static_cast<int>(k.size()) - 1) / 2;
  std::vector<float> tmp(d.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          int sx = std::clamp(x + i, 0, w - 1);
          acc += k[static_cast<size_t>(i + radius)] * d[(static_cast<size_t>(y) * w + sx) * ch + c];
        }
        tmp[(static_cast<size_t>(y) * w + x) * ch + c] = static_cast<float>(acc);
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          int sy = std::clamp(y + i, 0, h - 1);
          acc += k[static_cast<size_t>(i + radius)] * tmp[(static_cast<size_t>(sy) * w + x) * ch + c];
        }
        d[(static_cast<size_t>(y) * w + x) * ch + c] = static_cast<float>(acc);
      }
}

// Exact-overlap area average to (nw, nh).
std::vector<float> area_downscale(const std::vector<float>& d, int w, int h, int ch, int nw, int nh) {
  std::vector<float> out(static_cast<size_t>(nw) * nh * ch);
  double sx = static_cast<double>(w) / nw, sy = static_cast<double>(h) / nh;
  for (int y = 0; y < nh; ++y) {
    double y0 = y * sy, y1 = (y + 1) * sy;
    int iy0 = static_cast<int>(std::floor(y0)), iy1 = std::min(h, static_cast<int>(std::ceil(y1)));
    for (int x = 0; x < nw; ++x) {
      double x0 = x * sx, x1 = (x + 1) * sx;
      int ix0 = static_cast<int>(std::floor(x0)), ix1 = std::min(w, static_cast<int>(std::ceil(x1)));
      for (int c = 0; c < ch; ++c) {
        double acc = 0, area = 0;
        for (int yy = iy0; yy < iy1; ++yy) {
          double hy = std::min<double>(yy + 1, y1) - std::max<double>(yy, y0);
          for (int xx = ix0; xx < ix1; ++xx) {
            double hx = std::min<double>(xx + 1, x1) - std::max<double>(xx, x0);
            acc += hx * hy * d[(static_cast<size_t>(yy) * w + xx) * ch + c];
            area += hx * hy;
          }
        }
        out[(static_cast<size_t>(y) * nw + x) * ch + c] = static_cast<float>(acc / area);
      }
    }
  }
  return out;
}

std::vector<float> bilinear_upscale(const std::vector<float>& d, int w, int h, int ch, int nw, int nh) {
  std::vector<float> out(static_cast<size_t>(nw) * nh * ch);
  for (int y = 0; y < nh; ++y) {
    double v = (y + 0.5) * h / nh - 0.5;
    int y0 = static_cast<int>(std::floor(v));
    double fy = v - y0;
    int ya = std::clamp(y0, 0, h - 1), yb = std::clamp(y0 + 1, 0, h - 1);
    for (int x = 0; x < nw; ++x) {
      double u = (x + 0.5) * w / nw - 0.5;
      int x0 = static_cast<int>(std::floor(u));
      double fx = u - x0;
      int xa = std::clamp(x0, 0, w - 1), xb = std::clamp(x0 + 1, 0, w - 1);
      for (int c = 0; c < ch; ++c) {
        double val = (1 - fx) * (1 - fy) * d[(static_cast<size_t>(ya) * w + xa) * ch + c] +
                     fx * (1 - fy) * d[(static_cast<size_t>(ya) * w + xb) * ch + c] +
                     (1 - fx) * fy * d[(static_cast<size_t>(yb) * w + xa) * ch + c] +
                     fx * fy * d[(static_cast<size_t>(yb) * w + xb) * ch + c];
        out[(static_cast<size_t>(y) * nw + x) * ch + c] = static_cast<float>(val);
      }
    }
  }
  return out;
}

void stage_resample(std::vector<float>& d, int w, int h, int ch, double factor) {
  int nw = std::max(1, static_cast<int>(std::lround(w / factor)));
  int nh = std::max(1, static_cast<int>(std::lround(h / factor)));
  if (nw == w && nh == h) return;
  auto small = area_downscale(d, w, h, ch, nw, nh);
  d = bilinear_upscale(small, nw, nh, ch, w, h);
}

void stage_noise(std::vector<float>& d, double sigma, Rng& rng) {
  for (auto& v : d) v = clamp255(static_cast<float>(v + sigma * rng.normal()));
}

// Standard luminance quantization table; scaled by the usual quality curve.
constexpr int kQuantBase[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

void stage_block_quantize(std::vector<float>& d, int w, int h, int ch, double quality) {
  double scale = quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality;
  double q[64];
  for (int i = 0; i < 64; ++i)
    q[i] = std::clamp(std::floor((kQuantBase[i] * scale + 50.0) / 100.0), 1.0, 255.0);

  // DCT-II basis, orthonormal.
  double basis[8][8];
  for (int k = 0; k < 8; ++k)
    for (int n = 0; n < 8; ++n)
      basis[k][n] = (k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8)) *
                    std::cos((2 * n + 1) * k * M_PI / 16.0);

  for (int c = 0; c < ch; ++c)
    for (int by = 0; by < h; by += 8)
      for (int bx = 0; bx < w; bx += 8) {
        double block[8][8], coef[8][8];
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            int sx = std::min(bx + x, w - 1), sy = std::min(by + y, h - 1);
            block[y][x] = d[(static_cast<size_t>(sy) * w + sx) * ch + c] - 128.0;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double acc = 0;
            for (int y = 0; y < 8; ++y)
              for (int x = 0; x < 8; ++x) acc += block[y][x] * basis[u][y] * basis[v][x];
            coef[u][v] = std::round(acc / q[u * 8 + v]) * q[u * 8 + v];
          }
        for (int y = 0; y < 8; ++y) {
          if (by + y >= h) break;
          for (int x = 0; x < 8; ++x) {
            if (bx + x >= w) break;
            double acc = 0;
            for (int u = 0; u < 8; ++u)
              for (int v = 0; v < 8; ++v) acc += coef[u][v] * basis[u][y] * basis[v][x];
            d[(static_cast<size_t>(by + y) * w + (bx + x)) * ch + c] = clamp255(static_cast<float>(acc + 128.0));
          }
        }
      }
}

}  // namespace

Kernel motion_blur_kernel(int length, double angle_deg) {
  if (length < 1) throw UsageError("motion_blur_kernel: length must be >= 1");
  double a = angle_deg * M_PI / 180.0;
  double dx = std::cos(a), dy = std::sin(a);
  std::vector<std::pair<int, int>> pts;
  int max_x = 0, max_y = 0;
  for (int i = 0; i < length; ++i) {
    double t = i - (length - 1) / 2.0;
    int ix = static_cast<int>(std::lround(t * dx));
    int iy = static_cast<int>(std::lround(t * dy));
    pts.emplace_back(ix, iy);
    max_x = std::max(max_x, std::abs(ix));
    max_y = std::max(max_y, std::abs(iy));
  }
  Kernel k;
  k.w = 2 * max_x + 1;
  k.h = 2 * max_y + 1;
  k.cx = max_x;
  k.cy = max_y;
  k.k.assign(static_cast<size_t>(k.w) * k.h, 0.0);
  for (auto [ix, iy] : pts)
    k.k[static_cast<size_t>(iy + max_y) * k.w + (ix + max_x)] += 1.0 / length;
  return k;
}

void apply_stages(std::vector<float>& data, int w, int h, int ch,
                  const std::vector<Stage>& stages, Rng& rng) {
  for (const auto& s : stages) {
    if (rng.uniform() >= s.probability) continue;
    switch (s.kind) {
      case StageKind::perspective:
        stage_perspective(data, w, h, ch, rng.uniform(s.lo, s.hi), rng);
        break;
      case StageKind::contrast:
        stage_contrast(data, rng.uniform(s.lo, s.hi));
        break;
      case StageKind::motion_blur: {
        int len = static_cast<int>(s.lo) + rng.uniform_int(static_cast<int>(s.hi - s.lo) + 1);
        double ang = rng.uniform(s.aux_lo, s.aux_hi);
        convolve_replicate(data, w, h, ch, motion_blur_kernel(len, ang));
        break;
      }
      case StageKind::gaussian_blur:
        stage_gaussian_blur(data, w, h, ch, rng.uniform(s.lo, s.hi));
        break;
      case StageKind::resample:
        stage_resample(data, w, h, ch, rng.uniform(s.lo, s.hi));
        break;
      case StageKind::gaussian_noise:
        stage_noise(data, rng.uniform(s.lo, s.hi), rng);
        break;
      case StageKind::block_quantize:
        stage_block_quantize(data, w, h, ch, rng.uniform(s.lo, s.hi));
        break;
    }
    for (auto& v : data) v = clamp255(v);
  }
}

Image degrade(const Image& img, const DegradeConfig& cfg, uint64_t seed) {
  cfg.validate();
  Image cur = img;
  for (int pass = 0; pass < cfg.orders; ++pass) {
    // Pass 0 consumes the seed itself, later passes a mixed child; an
    // orders=N run therefore equals N chained orders=1 runs seeded with
    // pass_seed(seed, k).
    Rng pass_rng(pass_seed(seed, pass));
    auto data = to_float(cur);
    apply_stages(data, cur.width, cur.height, cur.channels, cfg.stages, pass_rng);
    cur = from_float(data, cur.width, cur.height, cur.channels);
  }
  return cur;
}

}  // namespace chardiff::degrade
