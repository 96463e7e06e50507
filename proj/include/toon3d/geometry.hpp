#pragma once

#include <array>
#include <cmath>

#include "toon3d/ad.hpp"

namespace toon3d {

template <class T>
struct Vec2 {
  T x{}, y{};

  friend Vec2 operator+(const Vec2& a, const Vec2& b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(const Vec2& a, const Vec2& b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(const T& s, const Vec2& a) { return {s * a.x, s * a.y}; }
  friend T dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
  friend T cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
  friend T squared_norm(const Vec2& a) { return a.x * a.x + a.y * a.y; }
};

template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(const T& s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
  friend T dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
  friend T squared_norm(const Vec3& a) { return a.x * a.x + a.y * a.y + a.z * a.z; }
};

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;

// Row-major 3x3.
template <class T>
struct Mat3 {
  std::array<T, 9> m{};

  const T& operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
  T& operator()(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }

  Vec3<T> operator*(const Vec3<T>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Vec3<T> transpose_times(const Vec3<T>& v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z, m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
};

// Quaternion stored (w, x, y, z). The matrix is built from the normalized
// quaternion, so the map is invariant to the quaternion's length.
template <class T>
Mat3<T> rotation_from_quaternion(const std::array<T, 4>& q) {
  const T n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
  const T s = T(2) / n2;
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<T> r;
  r.m = {T(1) - s * (y * y + z * z), s * (x * y - w * z),         s * (x * z + w * y),
         s * (x * y + w * z),         T(1) - s * (x * x + z * z), s * (y * z - w * x),
         s * (x * z - w * y),         s * (y * z + w * x),         T(1) - s * (x * x + y * y)};
  return r;
}

inline std::array<double, 4> quaternion_from_rotation(const Mat3<double>& r) {
  std::array<double, 4> q{};
  const double tr = r(0, 0) + r(1, 1) + r(2, 2);
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (double& c : q) c /= n;
  if (q[0] < 0.0) {
    for (double& c : q) c = -c;
  }
  return q;
}

inline std::array<double, 4> quaternion_multiply(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

inline std::array<double, 4> quaternion_from_axis_angle(Vec3d axis, double angle) {
  const double n = std::sqrt(squared_norm(axis));
  if (n == 0.0) return {1.0, 0.0, 0.0, 0.0};
  const double s = std::sin(0.5 * angle) / n;
  return {std::cos(0.5 * angle), axis.x * s, axis.y * s, axis.z * s};
}

}  // namespace toon3d
