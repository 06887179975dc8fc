#include <doctest.h>

#include <cmath>

#include "chardiff/charprior.hpp"
#include "chardiff/degrade.hpp"
#include "chardiff/errors.hpp"
#include "chardiff/plates.hpp"
#include "gradcheck.hpp"

using namespace chardiff;
using namespace chardiff::charprior;
using chardiff::testing::gradcheck;

namespace {

plates::PlateStyle desk_style() {
  plates::PlateStyle s;
  s.width = 64;
  s.height = 32;
  s.cell_w = 8;
  s.cell_h = 16;
  s.min_len = 1;
  s.max_len = 6;
  return s;
}

}  // namespace

TEST_CASE("oracle segmentation returns the supplied boxes verbatim") {
  auto sample = plates::render_plate("AB12", desk_style(), 5);
  auto boxes = segment_chars(sample.hq, SegmenterMode::oracle, &sample.boxes);
  CHECK(boxes == sample.boxes);
  CHECK_THROWS_AS(segment_chars(sample.hq, SegmenterMode::oracle, nullptr), UsageError);
}

TEST_CASE("projection segmentation on a clean render matches the oracle within 1px") {
  auto sample = plates::render_plate("AB", desk_style(), 3);
  auto boxes = segment_chars(sample.hq, SegmenterMode::projection);
  REQUIRE(boxes.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(boxes[i].x0 - sample.boxes[i].x0) <= 1);
    CHECK(std::abs(boxes[i].x1 - sample.boxes[i].x1) <= 1);
  }
}

TEST_CASE("projection segmentation of a constant image is empty") {
  Image flat(64, 32, 1, 200);
  CHECK(segment_chars(flat, SegmenterMode::projection).empty());
}

TEST_CASE("ocr self-match on a clean render has confidence exactly 1") {
  TemplateOcr ocr;
  auto sample = plates::render_plate("A", desk_style(), 11);
  auto det = ocr.classify(sample.hq, sample.boxes[0]);
  CHECK(ocr.symbol(det.class_id) == 'A');
  CHECK(det.confidence == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ocr is perfect over the whole vocabulary on clean renders") {
  TemplateOcr ocr;
  auto style = desk_style();
  for (char c : plates::kFullVocab) {
    auto sample = plates::render_plate(std::string(1, c), style, 21u + static_cast<uint64_t>(c));
    auto det = ocr.classify(sample.hq, sample.boxes[0]);
    INFO("character ", c);
    CHECK(ocr.symbol(det.class_id) == c);
    CHECK(det.confidence > 0.999);
  }
}

TEST_CASE("ocr on integer-upscaled renders stays exact") {
  TemplateOcr ocr;
  auto style = desk_style();
  style.width = 128;
  style.height = 64;
  style.cell_w = 16;
  style.cell_h = 32;
  auto sample = plates::render_plate("R", style, 31);
  auto det = ocr.classify(sample.hq, sample.boxes[0]);
  CHECK(ocr.symbol(det.class_id) == 'R');
  CHECK(det.confidence == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zero-variance crop is unknown with confidence 0") {
  TemplateOcr ocr;
  Image flat(32, 32, 1, 128);
  auto det = ocr.classify(flat, {4, 4, 12, 20});
  CHECK(det.class_id == -1);
  CHECK(det.confidence == 0.0);
}

TEST_CASE("boxes_to_masks basics") {
  // whole image -> all ones
  auto whole = boxes_to_masks({{0, 0, 64, 32}}, 64, 32, 16, 8);
  REQUIRE(whole.size() == 1);
  for (uint8_t c : whole[0].cells) CHECK(c == 1);

  // left half of a 64x32 image on a 16x8 grid: columns 0-7
  auto half = boxes_to_masks({{0, 0, 32, 32}}, 64, 32, 16, 8);
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 16; ++u) CHECK(half[0].at(u, v) == (u < 8 ? 1 : 0));

  CHECK(boxes_to_masks({}, 64, 32, 16, 8).empty());

  // box fully outside the image: all-zero mask, flagged
  auto outside = boxes_to_masks({{70, 0, 80, 10}}, 64, 32, 16, 8);
  CHECK(outside[0].empty_flag);
  CHECK(!outside[0].any());
}

TEST_CASE("boxes_to_masks is monotone under box growth") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    int x0 = rng.uniform_int(50), y0 = rng.uniform_int(24);
    int x1 = x0 + 1 + rng.uniform_int(63 - x0), y1 = y0 + 1 + rng.uniform_int(31 - y0);
    plates::Box small{x0, y0, x1, y1};
    plates::Box big{std::max(0, x0 - rng.uniform_int(4)), std::max(0, y0 - rng.uniform_int(4)),
                    std::min(64, x1 + rng.uniform_int(4)), std::min(32, y1 + rng.uniform_int(4))};
    auto ms = boxes_to_masks({small, big}, 64, 32, 16, 8);
    for (size_t i = 0; i < ms[0].cells.size(); ++i)
      if (ms[0].cells[i]) CHECK(ms[1].cells[i] == 1);
  }
}

TEST_CASE("encode_chars determinism and sensitivity") {
  Rng rng(7);
  auto enc = CharEncoderParams<double>::init(12, 16, 8, rng);
  auto a = encode_chars({3}, enc);
  auto b = encode_chars({3}, enc);
  CHECK(a.data() == b.data());

  auto c = encode_chars({4}, enc);
  bool differs = false;
  for (size_t i = 0; i < c.numel(); ++i) differs = differs || c.data()[i] != a.data()[i];
  CHECK(differs);

  CHECK_THROWS_AS(encode_chars({12}, enc), ShapeError);  // id out of vocabulary
  CHECK_THROWS_AS(encode_chars({0, 1, 2, 3, 4, 5, 6, 7, 8}, enc), ShapeError);  // > max_chars
}

TEST_CASE("encoder gradients match finite differences") {
  Rng rng(19);
  auto enc = CharEncoderParams<double>::init(6, 8, 4, rng);
  enc.table.set_requires_grad();
  enc.wq.set_requires_grad();
  enc.wk.set_requires_grad();
  enc.wv.set_requires_grad();
  DTensor target({3, 8});
  for (auto& v : target.data()) v = rng.normal();
  auto res = gradcheck({enc.table, enc.wq, enc.wk, enc.wv},
                       [&] { return mse(encode_chars({1, 4, 2}, enc), target); });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("build_priors none mode is empty") {
  Rng rng(3);
  TemplateOcr ocr;
  auto enc = CharEncoderParams<float>::init(static_cast<int>(ocr.vocab().size()), 16, 8, rng);
  PriorExtractionConfig cfg{SegmenterMode::projection, 16, 8};
  auto sample = plates::render_plate("AB", desk_style(), 2);
  auto set = build_priors(sample.hq, PriorMode::none, cfg, ocr, enc);
  CHECK(set.chars.empty());
  CHECK(!set.string_embedding.has_value());
  CHECK(!set.fallback_warning);
}

TEST_CASE("char mode on a clean render recovers the label with confidence 1") {
  Rng rng(5);
  TemplateOcr ocr;
  auto enc = CharEncoderParams<float>::init(static_cast<int>(ocr.vocab().size()), 16, 8, rng);
  PriorExtractionConfig cfg{SegmenterMode::oracle, 16, 8};
  auto sample = plates::render_plate("K7PW", desk_style(), 10);
  auto set = build_priors(sample.hq, PriorMode::charm, cfg, ocr, enc, &sample.boxes);
  REQUIRE(set.chars.size() == 4);
  std::string pred;
  for (const auto& d : set.detections) {
    pred += ocr.symbol(d.class_id);
    CHECK(d.confidence == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(pred == "K7PW");

  // disjoint boxes here land on disjoint cells
  for (size_t i = 0; i + 1 < set.chars.size(); ++i)
    for (size_t p = 0; p < set.chars[i].mask.cells.size(); ++p)
      if (set.chars[i].mask.cells[p]) CHECK(set.chars[i + 1].mask.cells[p] == 0);
}

TEST_CASE("string mode pools the character embeddings") {
  Rng rng(5);
  TemplateOcr ocr;
  auto enc = CharEncoderParams<float>::init(static_cast<int>(ocr.vocab().size()), 16, 8, rng);
  PriorExtractionConfig cfg{SegmenterMode::oracle, 16, 8};
  auto sample = plates::render_plate("AB", desk_style(), 4);
  auto chars = build_priors(sample.hq, PriorMode::charm, cfg, ocr, enc, &sample.boxes);
  auto str = build_priors(sample.hq, PriorMode::string, cfg, ocr, enc, &sample.boxes);
  REQUIRE(chars.chars.size() == 2);
  REQUIRE(str.string_embedding.has_value());
  for (int j = 0; j < 16; ++j) {
    float mean = (chars.chars[0].embedding.data()[static_cast<size_t>(j)] +
                  chars.chars[1].embedding.data()[static_cast<size_t>(j)]) /
                 2.f;
    CHECK(str.string_embedding->data()[static_cast<size_t>(j)] == doctest::Approx(mean).epsilon(1e-6));
  }
}

TEST_CASE("zero detections fall back to the unconditional path with a warning") {
  Rng rng(5);
  TemplateOcr ocr;
  auto enc = CharEncoderParams<float>::init(static_cast<int>(ocr.vocab().size()), 16, 8, rng);
  PriorExtractionConfig cfg{SegmenterMode::projection, 16, 8};
  Image flat(64, 32, 1, 190);
  auto set = build_priors(flat, PriorMode::charm, cfg, ocr, enc);
  CHECK(set.fallback_warning);
  CHECK(set.chars.empty());
}

TEST_CASE("gradients reach the encoder but OCR state is immutable by construction") {
  Rng rng(5);
  TemplateOcr ocr;
  auto before = ocr.state_bytes();
  auto enc = CharEncoderParams<double>::init(static_cast<int>(ocr.vocab().size()), 16, 8, rng);
  enc.table.set_requires_grad();
  PriorExtractionConfig cfg{SegmenterMode::oracle, 16, 8};
  auto sample = plates::render_plate("AB", desk_style(), 8);
  auto set = build_priors(sample.hq, PriorMode::charm, cfg, ocr, enc, &sample.boxes);
  auto loss = mean(add(mul(set.chars[0].embedding, set.chars[0].embedding),
                       mul(set.chars[1].embedding, set.chars[1].embedding)));
  loss.backward();
  double gsum = 0;
  for (double g : enc.table.grad()) gsum += std::abs(g);
  CHECK(gsum > 0.0);
  CHECK(ocr.state_bytes() == before);
}

TEST_CASE("ocr accuracy on default-degraded crops sits in the calibrated band") {
  TemplateOcr ocr;
  auto style = desk_style();
  style.min_len = 5;
  style.max_len = 6;
  auto cfg = degrade::DegradeConfig::defaults();
  Rng rng(2025);
  int correct = 0, total = 0;
  for (int i = 0; i < 100 && total < 500; ++i) {
    int len = 5 + rng.uniform_int(2);
    std::string label;
    for (int k = 0; k < len; ++k)
      label += plates::kFullVocab[static_cast<size_t>(rng.uniform_int(36))];
    auto sample = plates::render_plate(label, style, 1000 + static_cast<uint64_t>(i));
    Image lq = degrade::degrade(sample.hq, cfg, 2000 + static_cast<uint64_t>(i));
    for (size_t b = 0; b < sample.boxes.size() && total < 500; ++b) {
      auto det = ocr.classify(lq, sample.boxes[b]);
      if (det.class_id >= 0 && ocr.symbol(det.class_id) == label[b]) ++correct;
      ++total;
    }
  }
  double acc = static_cast<double>(correct) / total;
  MESSAGE("degraded-crop OCR accuracy: ", acc);
  CHECK(acc >= 0.60);
  CHECK(acc <= 0.90);
}
