#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "chardiff/errors.hpp"
#include "chardiff/plates.hpp"

using namespace chardiff;
using namespace chardiff::plates;
namespace fs = std::filesystem;

namespace {

PlateStyle desk_style() {
  PlateStyle s;
  s.width = 64;
  s.height = 32;
  s.cell_w = 8;
  s.cell_h = 16;
  s.min_len = 5;
  s.max_len = 6;
  return s;
}

int ink_threshold(const Image& img) {
  uint8_t lo = 255, hi = 0;
  for (uint8_t p : img.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  return (lo + hi) / 2 + 1;
}

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("chardiff_plates_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("every glyph is nonzero and a single 4-connected component") {
  PlateStyle s = desk_style();
  s.max_len = 1;
  s.min_len = 1;
  for (char c : kFullVocab) {
    auto sample = render_plate(std::string(1, c), s, 99);
    auto ccs = connected_component_boxes(sample.hq, ink_threshold(sample.hq));
    INFO("glyph ", c);
    REQUIRE(ccs.size() == 1);
    CHECK(ccs[0] == sample.boxes[0]);
  }
}

TEST_CASE("single character box covers the inked extent") {
  PlateStyle s = desk_style();
  auto sample = render_plate("A", s, 1234);
  REQUIRE(sample.boxes.size() == 1);
  const Box& b = sample.boxes[0];
  int thr = ink_threshold(sample.hq);
  // every inked pixel inside the box, none outside
  for (int y = 0; y < sample.hq.height; ++y)
    for (int x = 0; x < sample.hq.width; ++x) {
      bool ink = sample.hq.at(x, y) < thr;
      bool inside = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
      if (ink) CHECK(inside);
    }
  // box is tight: each edge touches ink
  bool left = false, right = false, top = false, bottom = false;
  for (int y = b.y0; y < b.y1; ++y) {
    left = left || sample.hq.at(b.x0, y) < thr;
    right = right || sample.hq.at(b.x1 - 1, y) < thr;
  }
  for (int x = b.x0; x < b.x1; ++x) {
    top = top || sample.hq.at(x, b.y0) < thr;
    bottom = bottom || sample.hq.at(x, b.y1 - 1) < thr;
  }
  CHECK(left);
  CHECK(right);
  CHECK(top);
  CHECK(bottom);
}

TEST_CASE("I777B6 renders six disjoint left-to-right boxes") {
  auto sample = render_plate("I777B6", desk_style(), 7);
  REQUIRE(sample.boxes.size() == 6);
  for (size_t i = 1; i < 6; ++i) {
    CHECK(sample.boxes[i - 1].x1 <= sample.boxes[i].x0);  // disjoint, ordered
  }
  for (const Box& b : sample.boxes) {
    CHECK(b.x0 >= 0);
    CHECK(b.y0 >= 0);
    CHECK(b.x1 <= sample.hq.width);
    CHECK(b.y1 <= sample.hq.height);
  }
}

TEST_CASE("rendering is deterministic") {
  auto a = render_plate("HK42X", desk_style(), 555);
  auto b = render_plate("HK42X", desk_style(), 555);
  CHECK(a.hq.pixels == b.hq.pixels);
  CHECK(a.boxes == b.boxes);
  auto c = render_plate("HK42X", desk_style(), 556);
  CHECK(a.hq.pixels != c.hq.pixels);
}

TEST_CASE("renderer error paths") {
  PlateStyle s = desk_style();
  CHECK_THROWS_WITH_AS(render_plate("AB*", s, 1), doctest::Contains("*"), UsageError);
  CHECK_THROWS_AS(render_plate("ABCDEFG", s, 1), UsageError);  // exceeds max_len
  s.max_len = 12;
  CHECK_THROWS_WITH_AS(render_plate("ABCDEFGHIJKL", s, 1), doctest::Contains("fit"), UsageError);
}

TEST_CASE("connected-component re-segmentation reproduces manifest boxes") {
  PlateStyle s = desk_style();
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto sample = render_plate("PLT42", s, seed);
    auto ccs = connected_component_boxes(sample.hq, ink_threshold(sample.hq));
    REQUIRE(ccs.size() == sample.boxes.size());
    for (size_t i = 0; i < ccs.size(); ++i) CHECK(ccs[i] == sample.boxes[i]);
  }
}

TEST_CASE("pixels outside boxes are pure background") {
  auto sample = render_plate("A7K", desk_style(), 31);
  uint8_t bg = sample.hq.at(0, 0);
  for (int y = 0; y < sample.hq.height; ++y)
    for (int x = 0; x < sample.hq.width; ++x) {
      bool inside = false;
      for (const Box& b : sample.boxes)
        inside = inside || (x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1);
      if (!inside) CHECK(sample.hq.at(x, y) == bg);
    }
  for (const Box& b : sample.boxes) {
    int ink = 0;
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x)
        if (sample.hq.at(x, y) != bg) ++ink;
    CHECK(ink > 0);
  }
}

TEST_CASE("dataset split of 10 at 7:2:1 is exact") {
  auto dir = temp_dir("split");
  DatasetConfig cfg;
  cfg.style = desk_style();
  cfg.count = 10;
  cfg.out_dir = dir.string();
  auto res = generate_dataset(cfg, 42);
  CHECK(res.train.size() == 7);
  CHECK(res.val.size() == 2);
  CHECK(res.test.size() == 1);

  std::set<std::string> ids;
  for (const auto* m : {&res.train, &res.val, &res.test})
    for (const auto& r : *m) ids.insert(r.id);
  CHECK(ids.size() == 10);
  fs::remove_all(dir);
}

TEST_CASE("dataset generation is byte-deterministic") {
  auto dir1 = temp_dir("det1");
  auto dir2 = temp_dir("det2");
  DatasetConfig cfg;
  cfg.style = desk_style();
  cfg.count = 12;
  cfg.out_dir = dir1.string();
  generate_dataset(cfg, 9);
  cfg.out_dir = dir2.string();
  generate_dataset(cfg, 9);

  for (const char* name : {"manifest_train.jsonl", "manifest_val.jsonl", "manifest_test.jsonl"}) {
    std::ifstream a(dir1 / name), b(dir2 / name);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
  }
  for (int i = 0; i < 12; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "hq/%06d.pgm", i);
    auto ia = read_image((dir1 / idbuf).string());
    auto ib = read_image((dir2 / idbuf).string());
    CHECK(ia.pixels == ib.pixels);
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("empty dataset is not an error") {
  auto dir = temp_dir("empty");
  DatasetConfig cfg;
  cfg.style = desk_style();
  cfg.count = 0;
  cfg.out_dir = dir.string();
  auto res = generate_dataset(cfg, 1);
  CHECK(res.train.empty());
  CHECK(res.val.empty());
  CHECK(res.test.empty());
  CHECK(read_manifest((dir / "manifest_train.jsonl").string()).empty());
  fs::remove_all(dir);
}

TEST_CASE("manifest round trip and strictness") {
  auto dir = temp_dir("manifest");
  Manifest m;
  ManifestRecord r;
  r.id = "000001";
  r.hq_path = "hq/000001.pgm";
  r.label = "AB12";
  r.boxes = {{4, 8, 12, 24}, {14, 8, 22, 24}};
  r.seed = 0xFFFFFFFFFFFFFFFFull;  // full u64 must survive
  m.push_back(r);
  auto path = (dir / "m.jsonl").string();
  write_manifest(path, m);
  auto m2 = read_manifest(path);
  REQUIRE(m2.size() == 1);
  CHECK(m2[0].id == m[0].id);
  CHECK(m2[0].hq_path == m[0].hq_path);
  CHECK(!m2[0].lq_path.has_value());
  CHECK(m2[0].label == m[0].label);
  CHECK(m2[0].boxes == m[0].boxes);
  CHECK(m2[0].seed == m[0].seed);

  std::ofstream bad(dir / "bad.jsonl");
  bad << R"({"id":"x","label":"A","boxes":[],"seed":1,"mystery":3})" << "\n";
  bad.close();
  CHECK_THROWS_WITH_AS(read_manifest((dir / "bad.jsonl").string()), doctest::Contains("mystery"),
                       DataError);
  fs::remove_all(dir);
}

TEST_CASE("images round-trip bit-exactly through PGM") {
  auto dir = temp_dir("pgm");
  auto sample = render_plate("RT10", desk_style(), 77);
  auto path = (dir / "x.pgm").string();
  write_image(path, sample.hq);
  auto back = read_image(path);
  CHECK(back.width == sample.hq.width);
  CHECK(back.height == sample.hq.height);
  CHECK(back.channels == 1);
  CHECK(back.pixels == sample.hq.pixels);
  fs::remove_all(dir);
}
