#pragma once

// PNG (via libpng's simplified API) and PFM raster I/O.

#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "toon3d/error.hpp"
#include "toon3d/raster.hpp"

namespace toon3d::io {

namespace detail {

inline Raster<std::uint8_t> read_png_as(const std::filesystem::path& path, png_uint_32 format, int channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw LoadError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  Raster<std::uint8_t> out(static_cast<int>(image.width), static_cast<int>(image.height), channels);
  if (!png_image_finish_read(&image, nullptr, out.data().data(), 0, nullptr)) {
    png_image_free(&image);
    throw LoadError("corrupt PNG " + path.string() + ": " + image.message);
  }
  return out;
}

inline void write_png_as(const std::filesystem::path& path, const Raster<std::uint8_t>& raster, png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width());
  image.height = static_cast<png_uint_32>(raster.height());
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, raster.data().data(), 0, nullptr)) {
    throw IoError("io", "cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace detail

inline RgbRaster read_png_rgb(const std::filesystem::path& path) {
  return detail::read_png_as(path, PNG_FORMAT_RGB, 3);
}

inline Raster<std::uint8_t> read_png_gray(const std::filesystem::path& path) {
  return detail::read_png_as(path, PNG_FORMAT_GRAY, 1);
}

inline void write_png(const std::filesystem::path& path, const Raster<std::uint8_t>& raster) {
  if (raster.channels() == 3) {
    detail::write_png_as(path, raster, PNG_FORMAT_RGB);
  } else if (raster.channels() == 1) {
    detail::write_png_as(path, raster, PNG_FORMAT_GRAY);
  } else {
    throw IoError("io", "unsupported channel count for PNG " + path.string());
  }
}

// Grayscale PFM ("Pf"), float32, scanlines stored bottom-to-top.
inline DepthRaster read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open PFM " + path.string());
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  if (!in || magic != "Pf" || width <= 0 || height <= 0 || scale == 0.0) {
    throw LoadError("corrupt PFM header in " + path.string());
  }
  in.get();  // single whitespace byte before the payload
  const bool little = scale < 0.0;
  std::vector<std::uint32_t> words(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(words.size() * 4)) {
    throw LoadError("truncated PFM payload in " + path.string());
  }
  const bool host_little = std::endian::native == std::endian::little;
  DepthRaster out(width, height, 1);
  for (int row = 0; row < height; ++row) {
    for (int x = 0; x < width; ++x) {
      std::uint32_t w = words[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
      if (little != host_little) w = __builtin_bswap32(w);
      out.at(x, height - 1 - row) = static_cast<double>(std::bit_cast<float>(w));
    }
  }
  return out;
}

inline void write_pfm(const std::filesystem::path& path, const DepthRaster& raster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("io", "cannot write PFM " + path.string());
  out << "Pf\n" << raster.width() << " " << raster.height() << "\n-1.0\n";
  std::vector<std::uint32_t> words(static_cast<std::size_t>(raster.width()) * static_cast<std::size_t>(raster.height()));
  const bool host_little = std::endian::native == std::endian::little;
  for (int row = 0; row < raster.height(); ++row) {
    for (int x = 0; x < raster.width(); ++x) {
      std::uint32_t w = std::bit_cast<std::uint32_t>(static_cast<float>(raster.at(x, raster.height() - 1 - row)));
      if (!host_little) w = __builtin_bswap32(w);
      words[static_cast<std::size_t>(row) * static_cast<std::size_t>(raster.width()) + static_cast<std::size_t>(x)] = w;
    }
  }
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw IoError("io", "failed writing PFM " + path.string());
}

}  // namespace toon3d::io
