#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/grid_file.hpp"
#include "tactile_cal/core/maps.hpp"

namespace tactile_cal {

/// RGB8 PNG bytes via libpng's simplified API. No timestamps or text chunks
/// are written, so equal images encode to identical bytes.
inline std::vector<std::uint8_t> encode_png(const TactileImage& img) {
  if (img.pixels.size() != img.rows * img.cols * 3) throw InvalidArgument("image buffer size mismatch");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.cols);
  image.height = static_cast<png_uint_32>(img.rows);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline TactileImage decode_png(std::span<const std::uint8_t> data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, data.data(), data.size())) {
    throw FormatError(std::string("png decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  TactileImage img(image.height, image.width);
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    if (msg.find("CRC") != std::string::npos || msg.find("crc") != std::string::npos) {
      throw ChecksumError("png CRC error: " + msg);
    }
    throw FormatError("png decode failed: " + msg);
  }
  return img;
}

inline void save_png(const std::filesystem::path& path, const TactileImage& img) {
  write_file_bytes(path, encode_png(img));
}

inline TactileImage load_png(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  return decode_png(b);
}

}  // namespace tactile_cal
