#pragma once

// PCM16 mono RIFF/WAVE reader and writer.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "invlab/error.hpp"

namespace invlab::audio {

struct WavData {
  std::vector<double> samples;  // nominal range [-1, 1)
  std::uint32_t sample_rate = 16000;
};

namespace detail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace detail

/// Quantises to round(x * 32768) clamped to the int16 range.
inline std::int16_t to_pcm16(double x) {
  double q = std::nearbyint(x * 32768.0);
  if (q > 32767.0) q = 32767.0;
  if (q < -32768.0) q = -32768.0;
  if (std::isnan(q)) q = 0.0;
  return static_cast<std::int16_t>(q);
}

inline std::string encode_wav(const std::vector<double>& samples, std::uint32_t sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string b;
  b.reserve(44 + data_bytes);
  b += "RIFF";
  detail::put_u32(b, 36 + data_bytes);
  b += "WAVEfmt ";
  detail::put_u32(b, 16);
  detail::put_u16(b, 1);  // PCM
  detail::put_u16(b, 1);  // mono
  detail::put_u32(b, sample_rate);
  detail::put_u32(b, sample_rate * 2);
  detail::put_u16(b, 2);
  detail::put_u16(b, 16);
  b += "data";
  detail::put_u32(b, data_bytes);
  for (double x : samples) detail::put_u16(b, static_cast<std::uint16_t>(to_pcm16(x)));
  return b;
}

inline WavData decode_wav(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");
  WavData out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::uint32_t len = detail::get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > n) throw FormatError("truncated WAV chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("fmt chunk too short");
      const auto format = detail::get_u16(p + body);
      const auto channels = detail::get_u16(p + body + 2);
      const auto bits = detail::get_u16(p + body + 14);
      if (format != 1 || bits != 16) throw FormatError("only PCM16 WAV is supported");
      if (channels != 1) throw FormatError("only mono WAV is supported");
      out.sample_rate = detail::get_u32(p + body + 4);
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      out.samples.resize(len / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const auto s = static_cast<std::int16_t>(detail::get_u16(p + body + 2 * i));
        out.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return out;
    }
    pos = body + len + (len & 1);
  }
  throw FormatError("WAV file has no data chunk");
}

inline void write_wav(const std::filesystem::path& path, const std::vector<double>& samples,
                      std::uint32_t sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  const auto bytes = encode_wav(samples, sample_rate);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline WavData read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

}  // namespace invlab::audio
