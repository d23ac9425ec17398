#pragma once

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "aar/errors.hpp"
#include "aar/image.hpp"

namespace aar {

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  png_image meta;
  std::memset(&meta, 0, sizeof meta);
  meta.version = PNG_IMAGE_VERSION;
  meta.width = static_cast<png_uint_32>(img.width());
  meta.height = static_cast<png_uint_32>(img.height());
  meta.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&meta, path.string().c_str(), 0, img.bytes().data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + meta.message);
}

inline Image8 read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing image file " + path.string());
  png_image meta;
  std::memset(&meta, 0, sizeof meta);
  meta.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&meta, path.string().c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + meta.message);
  meta.format = PNG_FORMAT_RGB;
  Image8 img(static_cast<int>(meta.width), static_cast<int>(meta.height));
  if (!png_image_finish_read(&meta, nullptr, img.bytes().data(), 0, nullptr)) {
    png_image_free(&meta);
    throw IoError("cannot decode PNG " + path.string() + ": " + meta.message);
  }
  return img;
}

}  // namespace aar
