#pragma once

// 8-bit grayscale PNG I/O through libpng's simplified API.

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "invlab/error.hpp"

namespace invlab::png {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, height x width
};

inline void write_gray(const std::filesystem::path& path, const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height) throw ShapeError("png: pixel buffer does not match dimensions");
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&im, path.string().c_str(), 0, img.pixels.data(), 0, nullptr))
    throw Error("png: cannot write " + path.string() + ": " + im.message);
}

/// Colour inputs are converted to luminance by libpng.
inline GrayImage read_gray(const std::filesystem::path& path) {
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.string().c_str()))
    throw FormatError("png: cannot read " + path.string() + ": " + im.message);
  im.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = im.width;
  out.height = im.height;
  out.pixels.resize(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&im);
    throw FormatError("png: cannot decode " + path.string() + ": " + im.message);
  }
  return out;
}

}  // namespace invlab::png
