#include "chardiff/charprior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "chardiff/errors.hpp"

namespace chardiff::charprior {

namespace {

// Otsu threshold over arbitrary values quantized to 256 bins.
double otsu(const std::vector<double>& values) {
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-9) return lo;  // constant input: no split exists
  constexpr int kBins = 256;
  std::vector<long> hist(kBins, 0);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * (kBins - 1));
    hist[static_cast<size_t>(std::clamp(b, 0, kBins - 1))]++;
  }
  long total = static_cast<long>(values.size());
  double sum_all = 0;
  for (int b = 0; b < kBins; ++b) sum_all += static_cast<double>(b) * hist[b];
  double sum_bg = 0, best = -1;
  long w_bg = 0;
  int best_bin = 0;
  for (int b = 0; b < kBins; ++b) {
    w_bg += hist[b];
    if (w_bg == 0) continue;
    long w_fg = total - w_bg;
    if (w_fg == 0) break;
    sum_bg += static_cast<double>(b) * hist[b];
    double m_bg = sum_bg / w_bg;
    double m_fg = (sum_all - sum_bg) / w_fg;
    double between = static_cast<double>(w_bg) * w_fg * (m_bg - m_fg) * (m_bg - m_fg);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return lo + (best_bin + 0.5) * (hi - lo) / (kBins - 1);
}

double luminance(const Image& img, int x, int y) {
  if (img.channels == 1) return img.at(x, y);
  double s = 0;
  for (int c = 0; c < img.channels; ++c) s += img.at(x, y, c);
  return s / img.channels;
}

}  // namespace

std::vector<plates::Box> segment_chars(const Image& lq, SegmenterMode mode,
                                       const std::vector<plates::Box>* oracle_boxes) {
  if (mode == SegmenterMode::oracle) {
    if (!oracle_boxes)
      throw UsageError("segment_chars: oracle mode requires ground-truth boxes");
    return *oracle_boxes;
  }

  int w = lq.width, h = lq.height;
  std::vector<double> pix;
  pix.reserve(static_cast<size_t>(w) * h);
  double lo = 255, hi = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = luminance(lq, x, y);
      pix.push_back(v);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi - lo < 1e-9) return {};  // constant image

  // Binarize at the global Otsu split, then profile ink counts per column.
  // Interior glyph columns carry less ink than stroke columns; counting
  // binarized pixels keeps them above the column threshold where a raw
  // mean-intensity profile would split the glyph.
  double pix_thr = otsu(pix);
  std::vector<int> column(static_cast<size_t>(w), 0);
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y)
      if (luminance(lq, x, y) < pix_thr) column[static_cast<size_t>(x)]++;

  int col_thr = std::max(1, h / 20);
  std::vector<plates::Box> boxes;
  constexpr int kMinRun = 2;
  int run_start = -1;
  for (int x = 0; x <= w; ++x) {
    bool ink = x < w && column[static_cast<size_t>(x)] >= col_thr;
    if (ink && run_start < 0) run_start = x;
    if (!ink && run_start >= 0) {
      int run_end = x;
      if (run_end - run_start >= kMinRun) {
        int y0 = h, y1 = 0;
        for (int yy = 0; yy < h; ++yy)
          for (int xx = run_start; xx < run_end; ++xx)
            if (luminance(lq, xx, yy) < pix_thr) {
              y0 = std::min(y0, yy);
              y1 = std::max(y1, yy + 1);
            }
        if (y0 < y1) boxes.push_back({run_start, y0, run_end, y1});
      }
      run_start = -1;
    }
  }
  return boxes;
}

TemplateOcr::TemplateOcr(std::string vocab) : vocab_(std::move(vocab)) {
  if (vocab_.empty()) throw UsageError("ocr: empty vocabulary");
  templates_.reserve(vocab_.size());
  for (char c : vocab_) {
    const plates::Glyph& g = plates::glyph(c);
    int x0, y0, x1, y1;
    g.inked_bbox(x0, y0, x1, y1);
    // template = tight glyph bbox resized to the canonical cell, ink dark
    std::vector<double> t(static_cast<size_t>(tw_) * th_);
    for (int y = 0; y < th_; ++y) {
      int sy = y0 + static_cast<int>((static_cast<long>(y) * 2 + 1) * (y1 - y0) / (2 * static_cast<long>(th_)));
      for (int x = 0; x < tw_; ++x) {
        int sx = x0 + static_cast<int>((static_cast<long>(x) * 2 + 1) * (x1 - x0) / (2 * static_cast<long>(tw_)));
        t[static_cast<size_t>(y) * tw_ + x] = g.at(sx, sy) ? 0.0 : 1.0;
      }
    }
    double mean = 0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(t.size());
    double var = 0;
    for (double v : t) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.size());
    double inv = 1.0 / std::sqrt(var);
    for (auto& v : t) v = (v - mean) * inv;
    templates_.push_back(std::move(t));
  }
}

int TemplateOcr::class_of(char c) const {
  auto pos = vocab_.find(c);
  return pos == std::string::npos ? -1 : static_cast<int>(pos);
}

char TemplateOcr::symbol(int class_id) const {
  if (class_id < 0 || class_id >= static_cast<int>(vocab_.size())) return '?';
  return vocab_[static_cast<size_t>(class_id)];
}

CharDetection TemplateOcr::classify(const Image& img, const plates::Box& crop) const {
  CharDetection det;
  det.box = crop;
  int cw = crop.width(), chh = crop.height();
  if (cw <= 0 || chh <= 0) throw ShapeError("ocr: empty crop");
  if (crop.x0 < 0 || crop.y0 < 0 || crop.x1 > img.width || crop.y1 > img.height)
    throw ShapeError("ocr: crop outside image bounds");

  // nearest center sampling; exact on integer upscales of the glyph cell
  std::vector<double> z(static_cast<size_t>(tw_) * th_);
  for (int y = 0; y < th_; ++y) {
    int sy = crop.y0 + static_cast<int>((static_cast<long>(y) * 2 + 1) * chh / (2 * static_cast<long>(th_)));
    for (int x = 0; x < tw_; ++x) {
      int sx = crop.x0 + static_cast<int>((static_cast<long>(x) * 2 + 1) * cw / (2 * static_cast<long>(tw_)));
      z[static_cast<size_t>(y) * tw_ + x] = luminance(img, sx, sy);
    }
  }
  double mean = 0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  double var = 0;
  for (double v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.size());
  if (var < 1e-12) return det;  // unknown, confidence 0
  double inv = 1.0 / std::sqrt(var);

  double best = -2.0;
  for (size_t k = 0; k < templates_.size(); ++k) {
    double r = 0;
    const auto& t = templates_[k];
    for (size_t i = 0; i < z.size(); ++i) r += (z[i] - mean) * inv * t[i];
    r /= static_cast<double>(z.size());
    if (r > best + 1e-15) {  // ties break toward the lowest class id
      best = r;
      det.class_id = static_cast<int>(k);
    }
  }
  det.confidence = std::clamp((best + 1.0) / 2.0, 0.0, 1.0);
  return det;
}

std::vector<uint8_t> TemplateOcr::state_bytes() const {
  std::vector<uint8_t> bytes;
  bytes.insert(bytes.end(), vocab_.begin(), vocab_.end());
  for (const auto& t : templates_) {
    const auto* p = reinterpret_cast<const uint8_t*>(t.data());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(double));
  }
  return bytes;
}

std::vector<SpatialMask> boxes_to_masks(const std::vector<plates::Box>& boxes, int img_w,
                                        int img_h, int feat_w, int feat_h) {
  if (feat_w <= 0 || feat_h <= 0 || img_w <= 0 || img_h <= 0)
    throw ShapeError("boxes_to_masks: non-positive grid");
  std::vector<SpatialMask> masks;
  masks.reserve(boxes.size());
  for (const auto& b : boxes) {
    SpatialMask m;
    m.w = feat_w;
    m.h = feat_h;
    m.source = b;
    m.cells.assign(static_cast<size_t>(feat_w) * feat_h, 0);
    // cell (u,v) pre-image is [u*img_w/feat_w, (u+1)*img_w/feat_w); overlap
    // tested with exact integer cross-multiplication
    for (int v = 0; v < feat_h; ++v) {
      bool row_any = static_cast<long>(v) * img_h < static_cast<long>(b.y1) * feat_h &&
                     static_cast<long>(v + 1) * img_h > static_cast<long>(b.y0) * feat_h;
      if (!row_any) continue;
      for (int u = 0; u < feat_w; ++u) {
        bool col_any = static_cast<long>(u) * img_w < static_cast<long>(b.x1) * feat_w &&
                       static_cast<long>(u + 1) * img_w > static_cast<long>(b.x0) * feat_w;
        if (col_any) m.cells[static_cast<size_t>(v) * feat_w + u] = 1;
      }
    }
    m.empty_flag = !m.any();
    masks.push_back(std::move(m));
  }
  return masks;
}

SpatialMask all_ones_mask(int feat_w, int feat_h) {
  SpatialMask m;
  m.w = feat_w;
  m.h = feat_h;
  m.cells.assign(static_cast<size_t>(feat_w) * feat_h, 1);
  m.source = {0, 0, feat_w, feat_h};
  return m;
}

PriorMode prior_mode_from_string(const std::string& name) {
  if (name == "none") return PriorMode::none;
  if (name == "string") return PriorMode::string;
  if (name == "char_global") return PriorMode::char_global;
  if (name == "charm") return PriorMode::charm;
  throw UsageError("unknown prior_mode '" + name + "'");
}

std::string to_string(PriorMode mode) {
  switch (mode) {
    case PriorMode::none: return "none";
    case PriorMode::string: return "string";
    case PriorMode::char_global: return "char_global";
    case PriorMode::charm: return "charm";
  }
  return "?";
}

}  // namespace chardiff::charprior
