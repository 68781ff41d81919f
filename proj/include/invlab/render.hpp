#pragma once

// Grayscale renderings of tensors for run artifacts: images, spectrogram
// heatmaps, waveform envelopes and side-by-side grids.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "invlab/png.hpp"
#include "invlab/tensor.hpp"

namespace invlab::render {

using png::GrayImage;

namespace detail {
inline std::uint8_t to_byte(double v, double lo, double hi) {
  if (!(hi > lo)) return 128;
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * t));
}

inline std::pair<double, double> min_max(std::span<const double> v) {
  auto [a, b] = std::minmax_element(v.begin(), v.end());
  return {*a, *b};
}
}  // namespace detail

/// Rank-2 tensor as an image, row 0 on top. Without a range the values are
/// min-max normalised; every pixel is repeated scale x scale times.
inline GrayImage matrix(const Tensor& t, std::optional<std::pair<double, double>> range = std::nullopt,
                        std::size_t scale = 1, bool flip_rows = false) {
  if (t.rank() != 2) throw ShapeError("render::matrix expects a rank-2 tensor");
  if (scale == 0) throw ConfigError("render scale must be positive");
  const auto [lo, hi] = range ? *range : detail::min_max(t.data());
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  GrayImage img{cols * scale, rows * scale, std::vector<std::uint8_t>(rows * cols * scale * scale)};
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t src = flip_rows ? rows - 1 - r : r;
    for (std::size_t c = 0; c < cols; ++c) {
      const auto b = detail::to_byte(t.at(src, c), lo, hi);
      for (std::size_t dy = 0; dy < scale; ++dy)
        for (std::size_t dx = 0; dx < scale; ++dx) img.pixels[(r * scale + dy) * img.width + c * scale + dx] = b;
    }
  }
  return img;
}

/// [bins x frames] with the lowest bin at the bottom.
inline GrayImage spectrogram(const Tensor& spec, std::size_t scale = 4) { return matrix(spec, std::nullopt, scale, true); }

/// Per-column min/max envelope on a mid-grey background; the clip range is
/// [-1, 1].
inline GrayImage waveform(std::span<const double> wave, std::size_t width = 512, std::size_t height = 128) {
  GrayImage img{width, height, std::vector<std::uint8_t>(width * height, 224)};
  if (wave.empty()) return img;
  auto row_of = [&](double v) {
    const double t = (1.0 - std::clamp(v, -1.0, 1.0)) / 2.0;
    return std::min<std::size_t>(height - 1, static_cast<std::size_t>(t * static_cast<double>(height - 1) + 0.5));
  };
  const std::size_t mid = row_of(0.0);
  for (std::size_t c = 0; c < width; ++c) img.pixels[mid * width + c] = 160;
  for (std::size_t c = 0; c < width; ++c) {
    const std::size_t a = c * wave.size() / width;
    const std::size_t b = std::max(a + 1, (c + 1) * wave.size() / width);
    if (a >= wave.size()) break;
    const auto [lo, hi] = detail::min_max(wave.subspan(a, std::min(b, wave.size()) - a));
    for (std::size_t r = row_of(hi); r <= row_of(lo); ++r) img.pixels[r * width + c] = 0;
  }
  return img;
}

/// Images placed left to right with a white gap, top-aligned.
inline GrayImage grid(const std::vector<GrayImage>& tiles, std::size_t gap = 2) {
  if (tiles.empty()) return {};
  std::size_t w = 0, h = 0;
  for (const auto& t : tiles) {
    w += t.width;
    h = std::max(h, t.height);
  }
  w += gap * (tiles.size() - 1);
  GrayImage out{w, h, std::vector<std::uint8_t>(w * h, 255)};
  std::size_t x0 = 0;
  for (const auto& t : tiles) {
    for (std::size_t r = 0; r < t.height; ++r)
      std::copy_n(t.pixels.begin() + static_cast<long>(r * t.width), t.width,
                  out.pixels.begin() + static_cast<long>(r * w + x0));
    x0 += t.width + gap;
  }
  return out;
}

}  // namespace invlab::render
