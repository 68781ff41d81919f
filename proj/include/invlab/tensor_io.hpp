#pragma once

// Raw tensor blobs: 8-byte magic "INVLTNSR", u32 version (1), u32 rank,
// rank x u64 extents, then the values as little-endian IEEE-754 fp64.
// All integers little-endian.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "invlab/tensor.hpp"

namespace invlab {

inline constexpr char kTensorMagic[8] = {'I', 'N', 'V', 'L', 'T', 'N', 'S', 'R'};

inline std::string encode_tensor(const Tensor& t) {
  std::string b(kTensorMagic, 8);
  auto put = [&b](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(1, 4);
  put(t.rank(), 4);
  for (auto e : t.shape()) put(e, 8);
  for (double v : t.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put(bits, 8);
  }
  return b;
}

inline Tensor decode_tensor(const std::string& b) {
  const auto* p = reinterpret_cast<const unsigned char*>(b.data());
  std::size_t pos = 0;
  auto get = [&](int bytes) {
    if (pos + bytes > b.size()) throw FormatError("tensor blob truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[pos + i]) << (8 * i);
    pos += bytes;
    return v;
  };
  if (b.size() < 8 || std::memcmp(b.data(), kTensorMagic, 8) != 0) throw FormatError("not a tensor blob");
  pos = 8;
  if (get(4) != 1) throw FormatError("unsupported tensor blob version");
  const auto rank = get(4);
  if (rank > 16) throw FormatError("tensor blob rank too large");
  Shape shape(rank);
  for (auto& e : shape) e = get(8);
  const std::size_t n = shape_numel(shape);
  if (b.size() - pos != n * 8) throw FormatError("tensor blob size does not match its shape");
  std::vector<double> v(n);
  for (auto& x : v) {
    const std::uint64_t bits = get(8);
    std::memcpy(&x, &bits, 8);
  }
  return Tensor(std::move(shape), std::move(v));
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  const auto b = encode_tensor(t);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(b);
}

}  // namespace invlab
