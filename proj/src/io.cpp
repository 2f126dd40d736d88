#include "gemdepth/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gemdepth {

namespace {

// All multi-byte fields are little-endian. The writers below assume a
// little-endian host (asserted at startup of read/write on big-endian would
// require byte swaps; every supported target here is LE).

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_gemt_record(std::ostream& os, const Tensor& t) {
  os.write("GEMT", 4);
  put_u16(os, 1);
  const Shape& s = t.shape();
  put_u16(os, static_cast<uint16_t>(s.size()));
  for (int64_t d : s) put_u64(os, static_cast<uint64_t>(d));
  auto data = t.data();
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
}

Tensor read_gemt_record(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GEMT", 4) != 0)
    throw std::runtime_error("gemt: bad magic in " + path);
  const uint16_t version = get_u16(is);
  if (version != 1)
    throw std::runtime_error("gemt: unsupported version " +
                             std::to_string(version) + " in " + path);
  const uint16_t rank = get_u16(is);
  Shape shape(rank);
  for (uint16_t i = 0; i < rank; ++i)
    shape[i] = static_cast<int64_t>(get_u64(is));
  if (!is) throw std::runtime_error("gemt: truncated header in " + path);
  const int64_t n = shape_numel(shape);
  std::vector<float> data(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!is) throw std::runtime_error("gemt: truncated payload in " + path);
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

void write_gemt(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("gemt: cannot open " + path + " for write");
  write_gemt_record(os, t);
  if (!os) throw std::runtime_error("gemt: write failed for " + path);
}

Tensor read_gemt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("gemt: cannot open " + path);
  return read_gemt_record(is, path);
}

// Container layout: "GEMC", version u16=1, count u32, then the manifest
// (name_len u16 + name bytes + rank u16 + dims u64 each, per entry), then
// the GEMT records in manifest order.
void write_checkpoint(const std::string& path,
                      const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write("GEMC", 4);
  put_u16(os, 1);
  put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff)
      throw std::invalid_argument("checkpoint: name too long: " + e.name);
    put_u16(os, static_cast<uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const Shape& s = e.tensor.shape();
    put_u16(os, static_cast<uint16_t>(s.size()));
    for (int64_t d : s) put_u64(os, static_cast<uint64_t>(d));
  }
  for (const auto& e : entries) write_gemt_record(os, e.tensor);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

namespace {
struct ManifestEntry {
  std::string name;
  Shape shape;
};

std::vector<ManifestEntry> read_manifest(std::istream& is,
                                         const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GEMC", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint16_t version = get_u16(is);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const uint32_t count = get_u32(is);
  std::vector<ManifestEntry> manifest(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = get_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const uint16_t rank = get_u16(is);
    Shape shape(rank);
    for (uint16_t j = 0; j < rank; ++j)
      shape[j] = static_cast<int64_t>(get_u64(is));
    manifest[i] = {std::move(name), std::move(shape)};
  }
  if (!is) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  return manifest;
}
}  // namespace

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  auto manifest = read_manifest(is, path);
  std::vector<NamedTensor> out;
  out.reserve(manifest.size());
  for (auto& me : manifest) {
    Tensor t = read_gemt_record(is, path);
    if (t.shape() != me.shape)
      throw std::runtime_error("checkpoint: manifest/payload shape mismatch for '" +
                               me.name + "' in " + path);
    out.push_back({std::move(me.name), std::move(t)});
  }
  return out;
}

std::vector<std::pair<std::string, Shape>> checkpoint_manifest(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  auto manifest = read_manifest(is, path);
  std::vector<std::pair<std::string, Shape>> out;
  out.reserve(manifest.size());
  for (auto& me : manifest) out.emplace_back(me.name, me.shape);
  return out;
}

}  // namespace gemdepth
