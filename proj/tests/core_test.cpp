#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "toon3d/ad.hpp"
#include "toon3d/geometry.hpp"
#include "toon3d/optimizer.hpp"

namespace toon3d {
namespace {

TEST(Ad, ChainRuleThroughSharedNodes) {
  // f = x*y + sin-free mix: (x*y + x/y) * sqrt(x), reused subexpressions.
  const std::vector<double> x{1.7, 0.6};
  std::vector<double> g(2);
  const double v = ad::value_and_gradient(
      [](std::span<const ad::Var> v) {
        const ad::Var a = v[0] * v[1] + v[0] / v[1];
        return a * sqrt(v[0]);
      },
      x, g);
  const double a = 1.7 * 0.6 + 1.7 / 0.6, r = std::sqrt(1.7);
  EXPECT_NEAR(v, a * r, 1e-15);
  EXPECT_NEAR(g[0], (0.6 + 1.0 / 0.6) * r + a * 0.5 / r, 1e-13);
  EXPECT_NEAR(g[1], (1.7 - 1.7 / 0.36) * r, 1e-13);
}

TEST(Ad, KinksUseZeroSubgradient) {
  std::vector<double> x{0.0}, g(1);
  ad::value_and_gradient([](std::span<const ad::Var> v) { return abs(v[0]); }, x, g);
  EXPECT_EQ(g[0], 0.0);
  ad::value_and_gradient([](std::span<const ad::Var> v) { return ad::max0(v[0]) + ad::min0(v[0]); }, x, g);
  EXPECT_EQ(g[0], 0.0);
  x[0] = -2.0;
  ad::value_and_gradient([](std::span<const ad::Var> v) { return ad::min0(v[0]) * ad::min0(v[0]); }, x, g);
  EXPECT_EQ(g[0], -4.0);
}

TEST(Ad, ConstantsAreNotTracked) {
  std::vector<double> x{2.0}, g(1);
  const double v =
      ad::value_and_gradient([](std::span<const ad::Var> v) { return ad::Var(3.0) * ad::Var(4.0) + v[0]; }, x, g);
  EXPECT_EQ(v, 14.0);
  EXPECT_EQ(g[0], 1.0);
}

TEST(Geometry, QuaternionMatrixRoundTrip) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    const Vec3d axis{uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5};
    const auto q = quaternion_from_axis_angle(axis, uniform01(rng) * 2.0 * std::numbers::pi);
    const auto r = rotation_from_quaternion(q);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double d = 0.0;
        for (int l = 0; l < 3; ++l) d += r(i, l) * r(j, l);
        EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-14);
      }
    }
    const auto back = quaternion_from_rotation(r);
    const double sign = q[0] < 0.0 ? -1.0 : 1.0;
    for (std::size_t l = 0; l < 4; ++l) EXPECT_NEAR(back[l], sign * q[l], 1e-12);
  }
}

TEST(Geometry, MatrixIgnoresQuaternionLength) {
  const auto q = quaternion_from_axis_angle({1, 2, 3}, 0.4);
  const auto a = rotation_from_quaternion(q);
  const auto b = rotation_from_quaternion(std::array<double, 4>{3 * q[0], 3 * q[1], 3 * q[2], 3 * q[3]});
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(a.m[k], b.m[k], 1e-15);
}

TEST(Geometry, QuaternionProductComposes) {
  const auto a = quaternion_from_axis_angle({0, 0, 1}, 0.3);
  const auto b = quaternion_from_axis_angle({0, 0, 1}, 0.5);
  const auto c = quaternion_multiply(a, b);
  const auto d = quaternion_from_axis_angle({0, 0, 1}, 0.8);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_NEAR(c[l], d[l], 1e-15);
  const Vec3d p{1, 0, 0};
  const Vec3d rp = rotation_from_quaternion(d) * p;
  EXPECT_NEAR(rp.x, std::cos(0.8), 1e-15);
  EXPECT_NEAR(rp.y, std::sin(0.8), 1e-15);
}

}  // namespace
}  // namespace toon3d
