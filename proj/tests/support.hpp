#pragma once

// Shared fixtures for the test suites.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "toon3d/toon3d.hpp"

namespace toon3d::testing {

// 3 views, 8 correspondences, small images: cheap enough for finite differences.
inline synth::SyntheticSpec small_spec(std::uint64_t seed) {
  synth::SyntheticSpec s;
  s.seed = seed;
  s.n_cameras = 3;
  s.n_correspondences = 8;
  s.width = 96;
  s.height = 72;
  s.focal_px = 72.0;
  s.min_separation_px = 8.0;
  s.border_margin_px = 4.0;
  s.depth_tolerance = 1e-3;
  return s;
}

inline Scene small_scene(std::uint64_t seed) {
  return normalize_depths(synth::generate_scene(small_spec(seed)).first);
}

// Initial state pushed away from rest so every term is active: rotations,
// translations, intrinsics, depth affine and mesh vertices all perturbed.
inline AlignmentState random_state(const Scene& scene, std::uint64_t seed, double vertex_px = 3.0) {
  OptimizerConfig cfg;
  cfg.seed = seed;
  AlignmentState state = initial_state(scene, cfg, LossWeights{});
  std::mt19937_64 rng(seed * 7919 + 1);
  auto u = [&](double a, double b) { return a + (b - a) * uniform01(rng); };
  for (auto& cam : state.cams) {
    cam.rotation = quaternion_multiply(cam.rotation, quaternion_from_axis_angle({u(-1, 1), u(-1, 1), u(-1, 1)}, u(0, 0.2)));
    cam.translation = {u(-0.3, 0.3), u(-0.3, 0.3), u(-0.3, 0.3)};
    cam.fx *= u(0.8, 1.2);
    cam.fy *= u(0.8, 1.2);
    cam.scale = u(-0.4, 1.6);
    cam.shift = u(-0.3, 0.3);
  }
  for (auto& mesh : state.meshes) {
    for (auto& p : mesh.positions) {
      p.x += u(-vertex_px, vertex_px);
      p.y += u(-vertex_px, vertex_px);
      p.z += u(-0.1, 0.1);
    }
  }
  return state;
}

inline constexpr long double kFdStep = 1e-5L;

struct FdReport {
  double worst = 0.0;  // max over components of |ad - fd| / |ad|
  std::size_t index = 0;
  double ad = 0.0, fd = 0.0;
};

// Central differences in extended precision against the analytic gradient.
inline FdReport fd_compare(const Objective& objective, const std::vector<double>& x) {
  const std::vector<double> g = objective.gradient(x);
  std::vector<long double> xl(x.begin(), x.end());
  std::vector<double> fd(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const long double keep = xl[k];
    xl[k] = keep + kFdStep;
    const long double fp = objective.value_long(xl);
    xl[k] = keep - kFdStep;
    const long double fm = objective.value_long(xl);
    xl[k] = keep;
    fd[k] = static_cast<double>((fp - fm) / (2.0L * kFdStep));
  }
  // Relative error on every coordinate with |g| > 1e-8; the rest must also be
  // flat under finite differences.
  FdReport r;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double err = std::abs(g[k]) > 1e-8 ? std::abs(g[k] - fd[k]) / std::abs(g[k])
                                             : (std::abs(fd[k]) > 1e-7 ? 1.0 : 0.0);
    if (err > r.worst) r = {err, k, g[k], fd[k]};
  }
  return r;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("toon3d_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace toon3d::testing
