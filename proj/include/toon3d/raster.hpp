#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace toon3d {

// Interleaved row-major raster. Pixel (x, y) sits at integer coordinates,
// x rightward and y downward; the continuous domain is [0, w-1] x [0, h-1].
template <class T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels = 1, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * static_cast<std::size_t>(channels),
              fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(int width, int height) const { return width_ == width && height_ == height; }

  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width_ - 1 && v <= height_ - 1;
  }

  // Bilinear interpolation; caller guarantees contains(u, v).
  double bilinear(double u, double v, int c = 0) const {
    const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, std::max(width_ - 2, 0));
    const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, std::max(height_ - 2, 0));
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = u - x0;
    const double fy = v - y0;
    const double a = static_cast<double>(at(x0, y0, c));
    const double b = static_cast<double>(at(x1, y0, c));
    const double d = static_cast<double>(at(x0, y1, c));
    const double e = static_cast<double>(at(x1, y1, c));
    if (fx == 0.0 && fy == 0.0) return a;
    return (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e);
  }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.channels_ == b.channels_ && a.data_ == b.data_;
  }

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using RgbRaster = Raster<std::uint8_t>;    // 3 channels
using MaskRaster = Raster<std::uint8_t>;   // 1 channel, 1 = static, 0 = transient
using DepthRaster = Raster<double>;        // 1 channel

}  // namespace toon3d
