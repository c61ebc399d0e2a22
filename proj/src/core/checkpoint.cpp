// SPDX-License-Identifier: Apache-2.0
#include "ocvp/core/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ocvp::core {

namespace {

constexpr char kMagic[4] = {'O', 'C', 'K', 'P'};
constexpr uint16_t kVersion = 1;

template <class T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

void write_f64(std::ostream& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  write_le<uint64_t>(out, bits);
}

double read_f64(std::istream& in) {
  uint64_t bits = read_le<uint64_t>(in);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    out.write(kMagic, 4);
    write_le<uint16_t>(out, kVersion);
    const std::string meta = ckpt.meta.canonical_text();
    write_le<uint32_t>(out, static_cast<uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    write_le<uint32_t>(out, static_cast<uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, arr] : ckpt.arrays) {
      write_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      out.put(static_cast<char>(arr.shape.size()));
      int64_t numel = 1;
      for (int64_t d : arr.shape) {
        write_le<uint32_t>(out, static_cast<uint32_t>(d));
        numel *= d;
      }
      if (numel != static_cast<int64_t>(arr.data.size()))
        throw std::runtime_error("checkpoint: array '" + name + "' shape/data mismatch");
      for (double d : arr.data) write_f64(out, d);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: rename failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint16_t version = read_le<uint16_t>(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  const uint32_t meta_len = read_le<uint32_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  Checkpoint ckpt;
  ckpt.meta = parse_kv(meta);
  const uint32_t n_arrays = read_le<uint32_t>(in);
  for (uint32_t a = 0; a < n_arrays; ++a) {
    const uint16_t name_len = read_le<uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const int rank = in.get();
    NamedArray arr;
    int64_t numel = 1;
    for (int r = 0; r < rank; ++r) {
      arr.shape.push_back(static_cast<int64_t>(read_le<uint32_t>(in)));
      numel *= arr.shape.back();
    }
    arr.data.resize(static_cast<size_t>(numel));
    for (auto& d : arr.data) d = read_f64(in);
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    ckpt.arrays.emplace(std::move(name), std::move(arr));
  }
  return ckpt;
}

}  // namespace ocvp::core
