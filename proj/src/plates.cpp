#include "chardiff/plates.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "chardiff/errors.hpp"
#include "chardiff/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace chardiff::plates {

void PlateStyle::validate() const {
  if (width < 16 || height < 16) throw UsageError("plates: image size too small");
  if (channels != 1 && channels != 3) throw UsageError("plates: channels must be 1 or 3");
  if (vocab.empty()) throw UsageError("plates: empty vocabulary");
  for (char c : vocab)
    if (!has_glyph(c)) throw UsageError(std::string("plates: no glyph for vocab character '") + c + "'");
  if (min_len < 1 || max_len < min_len) throw UsageError("plates: bad label length range");
  if (cell_w < kGlyphW || cell_h < kGlyphH) throw UsageError("plates: cell smaller than glyph");
  if (spacing < 1) throw UsageError("plates: spacing must be >= 1");
  if (2 * box_pad >= spacing && box_pad > 0)
    throw UsageError("plates: box_pad would make adjacent boxes overlap");
  if (bg_min > bg_max || fg_min > fg_max || bg_min < 0 || bg_max > 255 || fg_min < 0 || fg_max > 255)
    throw UsageError("plates: bad intensity ranges");
  if (bg_min - fg_max < min_contrast)
    throw UsageError("plates: intensity ranges cannot guarantee min_contrast");
}

namespace {

// Center-point nearest sampling; shared with the OCR resize so that integer
// upscales round-trip exactly.
inline int nearest_index(int dst_i, int dst_n, int src_n) {
  int idx = static_cast<int>((static_cast<long>(dst_i) * 2 + 1) * src_n / (2 * static_cast<long>(dst_n)));
  return std::min(idx, src_n - 1);
}

}  // namespace

PlateSample render_plate(const std::string& label, const PlateStyle& style, uint64_t seed) {
  style.validate();
  if (label.empty()) throw UsageError("render_plate: empty label");
  if (static_cast<int>(label.size()) > style.max_len)
    throw UsageError("render_plate: label '" + label + "' exceeds max length " +
                     std::to_string(style.max_len));
  for (char c : label)
    if (style.vocab.find(c) == std::string::npos)
      throw UsageError(std::string("render_plate: character '") + c + "' not in vocabulary");

  int n = static_cast<int>(label.size());
  int total_w = n * style.cell_w + (n - 1) * style.spacing;
  if (total_w + 2 * style.margin > style.width || style.cell_h + 2 * style.margin > style.height)
    throw UsageError("render_plate: label '" + label + "' does not fit a " +
                     std::to_string(style.width) + "x" + std::to_string(style.height) + " plate");

  Rng rng(seed);
  int bg = style.bg_min + rng.uniform_int(style.bg_max - style.bg_min + 1);
  int fg = style.fg_min + rng.uniform_int(style.fg_max - style.fg_min + 1);
  int jx = style.jitter_x > 0 ? rng.uniform_int(2 * style.jitter_x + 1) - style.jitter_x : 0;
  int jy = style.jitter_y > 0 ? rng.uniform_int(2 * style.jitter_y + 1) - style.jitter_y : 0;

  int x_start = (style.width - total_w) / 2 + jx;
  x_start = std::clamp(x_start, style.margin, style.width - style.margin - total_w);
  int y_start = (style.height - style.cell_h) / 2 + jy;
  y_start = std::clamp(y_start, style.margin, style.height - style.margin - style.cell_h);

  PlateSample sample;
  sample.label = label;
  sample.seed = seed;
  sample.hq = Image(style.width, style.height, style.channels, static_cast<uint8_t>(bg));

  for (int i = 0; i < n; ++i) {
    const Glyph& g = glyph(label[i]);
    int cx = x_start + i * (style.cell_w + style.spacing);
    Box b{style.width, style.height, 0, 0};
    for (int py = 0; py < style.cell_h; ++py) {
      int sy = nearest_index(py, style.cell_h, kGlyphH);
      for (int px = 0; px < style.cell_w; ++px) {
        int sx = nearest_index(px, style.cell_w, kGlyphW);
        if (!g.at(sx, sy)) continue;
        int ix = cx + px, iy = y_start + py;
        for (int c = 0; c < style.channels; ++c) sample.hq.at(ix, iy, c) = static_cast<uint8_t>(fg);
        b.x0 = std::min(b.x0, ix);
        b.y0 = std::min(b.y0, iy);
        b.x1 = std::max(b.x1, ix + 1);
        b.y1 = std::max(b.y1, iy + 1);
      }
    }
    b.x0 = std::max(0, b.x0 - style.box_pad);
    b.y0 = std::max(0, b.y0 - style.box_pad);
    b.x1 = std::min(style.width, b.x1 + style.box_pad);
    b.y1 = std::min(style.height, b.y1 + style.box_pad);
    sample.boxes.push_back(b);
  }
  return sample;
}

namespace {

ordered_json box_to_json(const Box& b) { return ordered_json::array({b.x0, b.y0, b.x1, b.y1}); }

Box box_from_json(const ordered_json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("manifest: box must be [x0,y0,x1,y1]");
  return Box{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

void write_manifest(const std::string& path, const Manifest& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path);
  for (const auto& r : records) {
    ordered_json j;
    j["id"] = r.id;
    if (r.hq_path) j["hq_path"] = *r.hq_path;
    if (r.lq_path) j["lq_path"] = *r.lq_path;
    j["label"] = r.label;
    auto boxes = ordered_json::array();
    for (const auto& b : r.boxes) boxes.push_back(box_to_json(b));
    j["boxes"] = boxes;
    j["seed"] = r.seed;
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("short write on manifest " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  Manifest records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON record: " + e.what());
    }
    ManifestRecord r;
    for (auto& [key, value] : j.items()) {
      if (key == "id") r.id = value.get<std::string>();
      else if (key == "hq_path") r.hq_path = value.get<std::string>();
      else if (key == "lq_path") r.lq_path = value.get<std::string>();
      else if (key == "label") r.label = value.get<std::string>();
      else if (key == "seed") r.seed = value.get<uint64_t>();
      else if (key == "boxes")
        for (const auto& bj : value) r.boxes.push_back(box_from_json(bj));
      else
        throw DataError(path + ":" + std::to_string(lineno) + ": unknown manifest key '" + key + "'");
    }
    if (r.id.empty()) throw DataError(path + ":" + std::to_string(lineno) + ": record without id");
    records.push_back(std::move(r));
  }
  return records;
}

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Exact split sizes by largest remainder, deterministic tie-break on index.
std::array<int, 3> split_counts(int n, const std::array<int, 3>& w) {
  int total = w[0] + w[1] + w[2];
  if (total <= 0) throw UsageError("dataset: split weights must be positive");
  std::array<int, 3> counts{};
  std::array<std::pair<long, int>, 3> rem;
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    long num = static_cast<long>(n) * w[i];
    counts[i] = static_cast<int>(num / total);
    rem[i] = {num % total, i};
    assigned += counts[i];
  }
  std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int i = 0; assigned < n; ++i, ++assigned) counts[rem[static_cast<size_t>(i) % 3].second]++;
  return counts;
}

}  // namespace

DatasetResult generate_dataset(const DatasetConfig& cfg, uint64_t seed) {
  cfg.style.validate();
  if (cfg.count < 0) throw UsageError("dataset: negative count");
  if (cfg.out_dir.empty()) throw UsageError("dataset: output directory not set");

  std::vector<std::string> written;
  auto cleanup = [&] {
    for (const auto& p : written) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  };

  try {
    fs::create_directories(fs::path(cfg.out_dir) / "hq");
    Rng rng(seed);

    Manifest all;
    for (int i = 0; i < cfg.count; ++i) {
      char idbuf[16];
      std::snprintf(idbuf, sizeof(idbuf), "%06d", i);
      std::string id = idbuf;
      Rng sr = rng.child(static_cast<uint64_t>(i));
      int len = cfg.style.min_len + sr.uniform_int(cfg.style.max_len - cfg.style.min_len + 1);
      std::string label;
      for (int k = 0; k < len; ++k)
        label += cfg.style.vocab[static_cast<size_t>(sr.uniform_int(static_cast<int>(cfg.style.vocab.size())))];

      uint64_t sample_seed = Rng::mix(seed, static_cast<uint64_t>(i) + 1);
      PlateSample s = render_plate(label, cfg.style, sample_seed);
      std::string rel = "hq/" + id + ".pgm";
      std::string abs_path = (fs::path(cfg.out_dir) / rel).string();
      write_image(abs_path, s.hq);
      written.push_back(abs_path);

      ManifestRecord r;
      r.id = id;
      r.hq_path = rel;
      r.label = label;
      r.boxes = s.boxes;
      r.seed = sample_seed;
      all.push_back(std::move(r));
    }

    // Deterministic split: order records by hash of (seed, id), carve exact
    // largest-remainder counts.
    std::vector<size_t> order(all.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      uint64_t ha = Rng::mix(seed, fnv1a(all[a].id));
      uint64_t hb = Rng::mix(seed, fnv1a(all[b].id));
      return ha != hb ? ha < hb : all[a].id < all[b].id;
    });
    auto counts = split_counts(cfg.count, cfg.split);

    DatasetResult res;
    res.dir = cfg.out_dir;
    for (size_t k = 0; k < order.size(); ++k) {
      Manifest& dst = k < static_cast<size_t>(counts[0])
                          ? res.train
                          : (k < static_cast<size_t>(counts[0] + counts[1]) ? res.val : res.test);
      dst.push_back(all[order[k]]);
    }
    // Stable order inside each split file.
    for (Manifest* m : {&res.train, &res.val, &res.test})
      std::sort(m->begin(), m->end(),
                [](const ManifestRecord& a, const ManifestRecord& b) { return a.id < b.id; });

    for (auto& [name, m] : std::initializer_list<std::pair<const char*, Manifest*>>{
             {"manifest_train.jsonl", &res.train},
             {"manifest_val.jsonl", &res.val},
             {"manifest_test.jsonl", &res.test}}) {
      std::string p = (fs::path(cfg.out_dir) / name).string();
      write_manifest(p, *m);
      written.push_back(p);
    }
    return res;
  } catch (...) {
    cleanup();
    throw;
  }
}

std::vector<Box> connected_component_boxes(const Image& img, int threshold) {
  int w = img.width, h = img.height;
  std::vector<int> label(static_cast<size_t>(w) * h, -1);
  std::vector<Box> boxes;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (img.at(x, y) >= threshold || label[static_cast<size_t>(y) * w + x] >= 0) continue;
      int id = static_cast<int>(boxes.size());
      Box b{x, y, x + 1, y + 1};
      stack.emplace_back(x, y);
      label[static_cast<size_t>(y) * w + x] = id;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        b.x0 = std::min(b.x0, cx);
        b.y0 = std::min(b.y0, cy);
        b.x1 = std::max(b.x1, cx + 1);
        b.y1 = std::max(b.y1, cy + 1);
        constexpr int dx[] = {1, -1, 0, 0};
        constexpr int dy[] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
          int nx = cx + dx[d], ny = cy + dy[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          size_t idx = static_cast<size_t>(ny) * w + nx;
          if (label[idx] >= 0 || img.at(nx, ny) >= threshold) continue;
          label[idx] = id;
          stack.emplace_back(nx, ny);
        }
      }
      boxes.push_back(b);
    }
  std::sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) { return a.x0 < b.x0; });
  return boxes;
}

}  // namespace chardiff::plates
