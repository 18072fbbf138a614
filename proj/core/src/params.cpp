#include "cityprior/params.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "cityprior/errors.hpp"

namespace cityprior {

namespace {

constexpr char kMagic[4] = {'C', 'P', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t total_size(const std::vector<NamedBlock>& blocks) {
  std::size_t n = 0;
  for (const NamedBlock& b : blocks) n += b.size;
  return n;
}

void zero_blocks(std::vector<NamedBlock>& blocks) {
  for (NamedBlock& b : blocks) std::memset(b.data, 0, b.size * sizeof(double));
}

void add_blocks(std::vector<NamedBlock>& dst, const std::vector<NamedBlock>& src) {
  if (dst.size() != src.size()) throw DataError("block layout mismatch in add_blocks");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].size != src[i].size) throw DataError("block size mismatch in add_blocks: " + dst[i].name);
    for (std::size_t j = 0; j < dst[i].size; ++j) dst[i].data[j] += src[i].data[j];
  }
}

double global_norm(const std::vector<NamedBlock>& blocks) {
  double sq = 0.0;
  for (const NamedBlock& b : blocks)
    for (std::size_t j = 0; j < b.size; ++j) sq += b.data[j] * b.data[j];
  return std::sqrt(sq);
}

void scale_blocks(std::vector<NamedBlock>& blocks, double s) {
  for (NamedBlock& b : blocks)
    for (std::size_t j = 0; j < b.size; ++j) b.data[j] *= s;
}

void write_checkpoint(const std::string& path, const std::string& header_json,
                      const std::vector<NamedBlock>& blocks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  write_le<uint32_t>(os, kVersion);
  write_le<uint64_t>(os, header_json.size());
  os.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
  write_le<uint64_t>(os, blocks.size());
  std::vector<float> buf;
  for (const NamedBlock& b : blocks) {
    write_le<uint32_t>(os, static_cast<uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_le<uint32_t>(os, static_cast<uint32_t>(b.shape.size()));
    for (std::size_t d : b.shape) write_le<uint64_t>(os, d);
    buf.resize(b.size);
    for (std::size_t j = 0; j < b.size; ++j) buf[j] = static_cast<float>(b.data[j]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint not found: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad checkpoint magic in " + path);
  uint32_t version = read_le<uint32_t>(is);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);

  Checkpoint ckpt;
  uint64_t header_len = read_le<uint64_t>(is);
  ckpt.header_json.resize(header_len);
  is.read(ckpt.header_json.data(), static_cast<std::streamsize>(header_len));

  uint64_t count = read_le<uint64_t>(is);
  for (uint64_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    uint32_t name_len = read_le<uint32_t>(is);
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    uint32_t ndim = read_le<uint32_t>(is);
    std::size_t size = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<std::size_t>(read_le<uint64_t>(is)));
      size *= t.shape.back();
    }
    t.data.resize(size);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(size * sizeof(float)));
    if (!is) throw DataError("truncated checkpoint: " + path);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void load_into_blocks(const Checkpoint& ckpt, std::vector<NamedBlock>& blocks) {
  for (NamedBlock& b : blocks) {
    const CheckpointTensor* found = nullptr;
    for (const CheckpointTensor& t : ckpt.tensors)
      if (t.name == b.name) {
        found = &t;
        break;
      }
    if (!found) throw DataError("checkpoint is missing tensor: " + b.name);
    if (found->data.size() != b.size || found->shape != b.shape)
      throw DataError("checkpoint tensor shape mismatch: " + b.name);
    for (std::size_t j = 0; j < b.size; ++j) b.data[j] = static_cast<double>(found->data[j]);
  }
}

}  // namespace cityprior
