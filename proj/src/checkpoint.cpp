#include "chardiff/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "chardiff/errors.hpp"

namespace chardiff::cli {

uint32_t crc32(const uint8_t* data, size_t n) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

namespace {

constexpr char kMagic[4] = {'C', 'H', 'D', 'F'};

template <class T>
void put(std::vector<uint8_t>& buf, T v) {
  // little-endian, byte by byte, independent of host order
  for (size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<uint8_t>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <class T>
T take(const std::vector<uint8_t>& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw DataError("checkpoint: truncated file");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[off + i]) << (8 * i);
  off += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParamList<float>& params) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put<uint32_t>(buf, kCheckpointVersion);
  put<uint32_t>(buf, static_cast<uint32_t>(config_json.size()));
  buf.insert(buf.end(), config_json.begin(), config_json.end());

  put<uint32_t>(buf, static_cast<uint32_t>(params.params.size()));
  uint64_t offset = 0;
  for (const auto& p : params.params) {
    put<uint16_t>(buf, static_cast<uint16_t>(p.name().size()));
    buf.insert(buf.end(), p.name().begin(), p.name().end());
    put<uint8_t>(buf, 0);  // dtype f32
    put<uint8_t>(buf, static_cast<uint8_t>(p.shape().size()));
    for (int d : p.shape()) put<uint32_t>(buf, static_cast<uint32_t>(d));
    put<uint64_t>(buf, offset);
    offset += p.numel() * sizeof(float);
  }
  put<uint64_t>(buf, offset);
  for (const auto& p : params.params)
    for (float v : p.data()) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put<uint32_t>(buf, bits);
    }
  put<uint32_t>(buf, crc32(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("checkpoint: short write on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw DataError("checkpoint: truncated file");

  uint32_t stored_crc;
  {
    size_t tail = buf.size() - 4;
    uint32_t computed = crc32(buf.data(), tail);
    size_t off = tail;
    stored_crc = take<uint32_t>(buf, off);
    if (computed != stored_crc) throw DataError("checkpoint: checksum mismatch in " + path);
  }

  size_t off = 0;
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  off = 4;
  uint32_t version = take<uint32_t>(buf, off);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  uint32_t cfg_len = take<uint32_t>(buf, off);
  if (off + cfg_len > buf.size()) throw DataError("checkpoint: truncated config");
  Checkpoint ckpt;
  ckpt.config_json.assign(buf.begin() + static_cast<long>(off), buf.begin() + static_cast<long>(off + cfg_len));
  off += cfg_len;

  uint32_t count = take<uint32_t>(buf, off);
  struct Entry {
    std::string name;
    Shape shape;
    uint64_t offset;
  };
  std::vector<Entry> index;
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    uint16_t name_len = take<uint16_t>(buf, off);
    if (off + name_len > buf.size()) throw DataError("checkpoint: truncated index");
    e.name.assign(buf.begin() + static_cast<long>(off), buf.begin() + static_cast<long>(off + name_len));
    off += name_len;
    uint8_t dtype = take<uint8_t>(buf, off);
    if (dtype != 0) throw DataError("checkpoint: unsupported dtype");
    uint8_t ndim = take<uint8_t>(buf, off);
    for (int d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(take<uint32_t>(buf, off)));
    e.offset = take<uint64_t>(buf, off);
    index.push_back(std::move(e));
  }
  uint64_t blob_len = take<uint64_t>(buf, off);
  if (off + blob_len + 4 != buf.size()) throw DataError("checkpoint: blob length mismatch");

  for (auto& e : index) {
    CheckpointTensor t;
    t.name = std::move(e.name);
    t.shape = std::move(e.shape);
    size_t n = shape_numel(t.shape);
    size_t pos = off + e.offset;
    if (pos + n * 4 > off + blob_len) throw DataError("checkpoint: tensor outside blob");
    t.data.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(buf[pos + i * 4 + static_cast<size_t>(b)]) << (8 * b);
      std::memcpy(&t.data[i], &bits, 4);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamList<float>& params) {
  for (auto& p : params.params) {
    const CheckpointTensor* t = ckpt.find(p.name());
    if (!t) throw DataError("checkpoint: missing tensor '" + p.name() + "'");
    if (t->shape != p.shape())
      throw DataError("checkpoint: shape mismatch for '" + p.name() + "': file " +
                      shape_str(t->shape) + " vs model " + shape_str(p.shape()));
    p.data() = t->data;
  }
}

}  // namespace chardiff::cli
