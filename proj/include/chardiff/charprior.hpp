#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chardiff/glyphs.hpp"
#include "chardiff/image.hpp"
#include "chardiff/plates.hpp"
#include "chardiff/tensor.hpp"

namespace chardiff::charprior {

enum class SegmenterMode { oracle, projection };

struct CharDetection {
  plates::Box box;
  int class_id = -1;  // index into the OCR vocabulary, -1 = unknown
  double confidence = 0.0;
};

// Binary mask on the denoiser's mid-block grid.
struct SpatialMask {
  int w = 0, h = 0;
  std::vector<uint8_t> cells;  // row-major, {0,1}
  plates::Box source;
  bool empty_flag = false;

  uint8_t at(int x, int y) const { return cells[static_cast<size_t>(y) * w + x]; }
  bool any() const {
    for (uint8_t c : cells)
      if (c) return true;
    return false;
  }
};

// Character boxes ordered left to right. Oracle mode returns the supplied
// ground-truth boxes verbatim; projection mode thresholds the column
// intensity profile (Otsu) and splits on gaps. Assumes dark ink on a light
// background. A constant image yields an empty list.
std::vector<plates::Box> segment_chars(
    const Image& lq, SegmenterMode mode,
    const std::vector<plates::Box>* oracle_boxes = nullptr);

// Frozen template-matching recognizer over the glyph atlas. Never receives
// gradients; state_bytes() exists so tests can pin that down.
class TemplateOcr {
 public:
  explicit TemplateOcr(std::string vocab = plates::kFullVocab);

  // Normalized cross-correlation argmax; confidence maps r -> (r+1)/2.
  // Zero-variance crops return {-1, 0}.
  CharDetection classify(const Image& img, const plates::Box& crop) const;

  const std::string& vocab() const { return vocab_; }
  int class_of(char c) const;  // -1 when absent
  char symbol(int class_id) const;
  std::vector<uint8_t> state_bytes() const;

 private:
  std::string vocab_;
  int tw_ = plates::kGlyphW, th_ = plates::kGlyphH;
  std::vector<std::vector<double>> templates_;  // standardized, ink dark
};

// A feature cell is 1 iff its pixel pre-image overlaps the box with positive
// area. Boxes fully outside the image produce an all-zero mask with
// empty_flag set.
std::vector<SpatialMask> boxes_to_masks(const std::vector<plates::Box>& boxes, int img_w,
                                        int img_h, int feat_w, int feat_h);

SpatialMask all_ones_mask(int feat_w, int feat_h);

// Fixed sinusoidal position table [max_chars, dim].
template <class S>
BasicTensor<S> sinusoidal_positions(int max_chars, int dim) {
  BasicTensor<S> pos({max_chars, dim});
  for (int i = 0; i < max_chars; ++i)
    for (int j = 0; j < dim; ++j) {
      double freq = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(dim));
      pos.ptr()[static_cast<size_t>(i) * dim + j] =
          static_cast<S>(j % 2 == 0 ? std::sin(i * freq) : std::cos(i * freq));
    }
  return pos;
}

// Character encoder: embedding table + fixed sinusoidal positions + one
// single-head self-attention block. Trained jointly with the denoiser.
template <class S>
struct CharEncoderParams {
  int vocab_size = 0, dim = 0, max_chars = 0;
  BasicTensor<S> table;  // [vocab, C]
  BasicTensor<S> pos;    // [max_chars, C], sinusoidal, frozen
  BasicTensor<S> wq, wk, wv;  // [C, C]

  static CharEncoderParams init(int vocab_size, int dim, int max_chars, Rng& rng) {
    CharEncoderParams p;
    p.vocab_size = vocab_size;
    p.dim = dim;
    p.max_chars = max_chars;
    S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dim)));
    p.table = BasicTensor<S>::randn({vocab_size, dim}, rng, scale);
    p.wq = BasicTensor<S>::randn({dim, dim}, rng, scale);
    p.wk = BasicTensor<S>::randn({dim, dim}, rng, scale);
    p.wv = BasicTensor<S>::randn({dim, dim}, rng, scale);
    p.pos = sinusoidal_positions<S>(max_chars, dim);
    return p;
  }
};

// Row i is the attention block applied to (table[ids[i]] + pos[i]).
template <class S>
BasicTensor<S> encode_chars(const std::vector<int>& ids, const CharEncoderParams<S>& p) {
  int n = static_cast<int>(ids.size());
  if (n == 0) throw ShapeError("encode_chars: empty id list");
  if (n > p.max_chars)
    throw ShapeError("encode_chars: " + std::to_string(n) + " ids exceed max_chars " +
                     std::to_string(p.max_chars));
  auto x = embed(p.table, ids);
  // positions are a frozen constant slice
  BasicTensor<S> pos_rows({n, p.dim});
  std::copy(p.pos.ptr(), p.pos.ptr() + static_cast<size_t>(n) * p.dim, pos_rows.ptr());
  x = add(x, pos_rows);
  auto q = matmul(x, p.wq);
  auto k = matmul(x, p.wk);
  auto v = matmul(x, p.wv);
  auto logits = mul_scalar(matmul(q, transpose(k)), static_cast<S>(1.0 / std::sqrt(static_cast<double>(p.dim))));
  auto attn = softmax(logits, 1);
  return add(x, matmul(attn, v));
}

enum class PriorMode { none, string, char_global, charm };

PriorMode prior_mode_from_string(const std::string& name);
std::string to_string(PriorMode mode);

template <class S>
struct CharPrior {
  BasicTensor<S> embedding;  // [C]
  SpatialMask mask;
};

template <class S>
struct PriorSet {
  PriorMode mode = PriorMode::none;
  std::vector<CharPrior<S>> chars;          // char_global / charm
  std::optional<BasicTensor<S>> string_embedding;  // string mode
  std::vector<CharDetection> detections;
  bool fallback_warning = false;  // zero detections -> unconditional path
};

struct PriorExtractionConfig {
  SegmenterMode segmenter = SegmenterMode::projection;
  int feat_w = 0, feat_h = 0;
};

// Frozen half of the prior pipeline: segmentation + recognition + mask
// rasterization. Deterministic, cacheable across training steps.
struct DetectedChars {
  std::vector<int> ids;
  std::vector<CharDetection> detections;
  std::vector<SpatialMask> masks;
  bool fallback = false;  // zero usable detections
};

inline DetectedChars detect_chars(const Image& lq, const PriorExtractionConfig& cfg,
                                  const TemplateOcr& ocr, int max_chars,
                                  const std::vector<plates::Box>* oracle_boxes = nullptr) {
  if (cfg.feat_w <= 0 || cfg.feat_h <= 0)
    throw ShapeError("detect_chars: feature grid not configured");
  DetectedChars out;
  auto boxes = segment_chars(lq, cfg.segmenter, oracle_boxes);
  std::vector<plates::Box> kept;
  for (const auto& b : boxes) {
    if (static_cast<int>(out.ids.size()) >= max_chars) break;
    CharDetection det = ocr.classify(lq, b);
    if (det.class_id < 0) continue;
    out.detections.push_back(det);
    out.ids.push_back(det.class_id);
    kept.push_back(b);
  }
  out.fallback = out.ids.empty();
  if (!out.fallback) out.masks = boxes_to_masks(kept, lq.width, lq.height, cfg.feat_w, cfg.feat_h);
  return out;
}

// Trainable half: embeds the detected ids through the character encoder.
// Rebuilt every step so gradients flow into the current tape.
template <class S>
PriorSet<S> assemble_priors(PriorMode mode, const DetectedChars& det,
                            const CharEncoderParams<S>& enc) {
  PriorSet<S> set;
  set.mode = mode;
  set.detections = det.detections;
  if (mode == PriorMode::none) return set;
  if (det.fallback) {
    set.fallback_warning = true;
    return set;
  }
  auto embeddings = encode_chars(det.ids, enc);
  if (mode == PriorMode::string) {
    int n = static_cast<int>(det.ids.size());
    BasicTensor<S> pool({1, n}, std::vector<S>(static_cast<size_t>(n), S(1) / static_cast<S>(n)));
    set.string_embedding = reshape(matmul(pool, embeddings), {enc.dim});
    return set;
  }
  for (size_t i = 0; i < det.ids.size(); ++i)
    set.chars.push_back({select_row(embeddings, static_cast<int>(i)), det.masks[i]});
  return set;
}

// Full prior pipeline: segment, recognize, encode, rasterize masks. With
// zero usable detections the set degrades to the unconditional path and
// flags the fallback.
template <class S>
PriorSet<S> build_priors(const Image& lq, PriorMode mode, const PriorExtractionConfig& cfg,
                         const TemplateOcr& ocr, const CharEncoderParams<S>& enc,
                         const std::vector<plates::Box>* oracle_boxes = nullptr) {
  PriorSet<S> set;
  set.mode = mode;
  if (mode == PriorMode::none) return set;
  return assemble_priors(mode, detect_chars(lq, cfg, ocr, enc.max_chars, oracle_boxes), enc);
}

}  // namespace chardiff::charprior
