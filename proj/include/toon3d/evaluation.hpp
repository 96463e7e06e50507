#pragma once

// Held-out correspondence evaluation (PCC), relative rotation error, and a
// traditional bundle-adjustment baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "toon3d/ad.hpp"
#include "toon3d/camera.hpp"
#include "toon3d/error.hpp"
#include "toon3d/mesh.hpp"
#include "toon3d/optimizer.hpp"
#include "toon3d/scene.hpp"

namespace toon3d {

struct HoldoutSplit {
  CorrespondenceSet train;
  CorrespondenceSet holdout;
  std::vector<int> holdout_index;  // positions in the input set
};

// Moves k correspondences to the holdout set. Candidates are visited in a
// seeded shuffle and taken only while every image keeps at least
// `min_train_per_image` visible training correspondences.
inline HoldoutSplit holdout_split(const CorrespondenceSet& corrs, int k, std::uint64_t seed,
                                  int min_train_per_image = 6) {
  if (k < 0) throw RangeError("evaluation", "holdout count must be non-negative");
  HoldoutSplit split;
  split.train = corrs;
  split.holdout = CorrespondenceSet(corrs.n_images(), 0);
  if (k == 0) return split;

  std::vector<int> order(static_cast<std::size_t>(corrs.n_points()));
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
  std::mt19937_64 rng(seed);
  for (std::size_t c = order.size(); c > 1; --c) {
    const auto r = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(c));
    std::swap(order[c - 1], order[std::min(r, c - 1)]);
  }
  std::vector<int> per_image(static_cast<std::size_t>(corrs.n_images()), 0);
  for (int c = 0; c < corrs.n_points(); ++c) {
    for (int i = 0; i < corrs.n_images(); ++i) per_image[static_cast<std::size_t>(i)] += corrs.visible(i, c) ? 1 : 0;
  }
  std::vector<char> held(order.size(), 0);
  int taken = 0;
  for (int c : order) {
    if (taken == k) break;
    bool ok = true;
    for (int i = 0; i < corrs.n_images(); ++i) {
      if (corrs.visible(i, c) && per_image[static_cast<std::size_t>(i)] - 1 < min_train_per_image) ok = false;
    }
    if (!ok) continue;
    for (int i = 0; i < corrs.n_images(); ++i) per_image[static_cast<std::size_t>(i)] -= corrs.visible(i, c) ? 1 : 0;
    held[static_cast<std::size_t>(c)] = 1;
    ++taken;
  }
  if (taken < k) {
    throw Error("evaluation", "cannot hold out " + std::to_string(k) + " correspondences while keeping " +
                                  std::to_string(min_train_per_image) + " per image");
  }
  std::vector<int> train_idx;
  for (int c = 0; c < corrs.n_points(); ++c) {
    if (held[static_cast<std::size_t>(c)]) split.holdout_index.push_back(c);
    else train_idx.push_back(c);
  }
  split.train = corrs.select(train_idx);
  split.holdout = corrs.select(split.holdout_index);
  return split;
}

struct PccResult {
  int n_evaluated = 0;
  int n_correct = 0;
  double fraction() const { return static_cast<double>(n_correct) / n_evaluated; }
};

// For every ordered visible pair (i -> j) of each holdout correspondence, the
// labeled pixel in image i is carried through mesh i (position and depth
// offset), backprojected with camera i, and projected into camera j. It is
// correct when it lands within alpha * max(w_j, h_j) of the labeled pixel of
// image j carried through mesh j. Points behind camera j are incorrect.
inline PccResult pcc(const Scene& scene, const AlignmentState& state, const CorrespondenceSet& holdout, double alpha) {
  if (holdout.n_images() != scene.n_images()) throw EvaluationError("evaluation", "holdout image count mismatch");
  PccResult r;
  std::vector<FaceLocator> locators;
  for (const auto& mesh : state.meshes) locators.emplace_back(mesh.topology.vertices0, mesh.topology.faces);
  auto carry = [&](int i, Vec2d px) -> std::optional<ForwardWarp> {
    const DeformableMesh& mesh = state.meshes[static_cast<std::size_t>(i)];
    const auto hit = locators[static_cast<std::size_t>(i)].locate(px);
    if (!hit) return std::nullopt;
    const Face& f = mesh.topology.faces[static_cast<std::size_t>(hit->face)];
    ForwardWarp out{{0.0, 0.0}, 0.0};
    for (std::size_t k = 0; k < 3; ++k) {
      const auto v = static_cast<std::size_t>(f[k]);
      out.pixel = out.pixel + hit->bary[k] * Vec2d{mesh.positions[v].x, mesh.positions[v].y};
      out.depth_offset += hit->bary[k] * (mesh.positions[v].z - mesh.z0[v]);
    }
    return out;
  };
  for (int c = 0; c < holdout.n_points(); ++c) {
    for (int i = 0; i < holdout.n_images(); ++i) {
      if (!holdout.visible(i, c)) continue;
      const ImageRecord& ri = scene.images[static_cast<std::size_t>(i)];
      const auto src = carry(i, holdout.pixel(i, c));
      for (int j = 0; j < holdout.n_images(); ++j) {
        if (j == i || !holdout.visible(j, c)) continue;
        ++r.n_evaluated;
        const auto dst = carry(j, holdout.pixel(j, c));
        if (!src || !dst) continue;
        const double depth = sample_depth(ri, holdout.pixel(i, c)) + src->depth_offset;
        const Vec3d p = backproject(intrinsic_coords(ri, src->pixel), depth, state.cams[static_cast<std::size_t>(i)]);
        double z = 0.0;
        const ImageRecord& rj = scene.images[static_cast<std::size_t>(j)];
        const Vec2d uv = project(p, state.cams[static_cast<std::size_t>(j)], &z);
        if (!(z > 0.0)) continue;
        const double radius = alpha * rj.max_dim();
        if (squared_norm(pixel_coords(rj, uv) - dst->pixel) <= radius * radius) ++r.n_correct;
      }
    }
  }
  if (r.n_evaluated == 0) throw EvaluationError("evaluation", "no holdout pairs to evaluate");
  return r;
}

// Mean over unordered pairs of the geodesic angle (degrees) between the
// relative rotations R_i^T R_j of the two camera sets. Rotations are
// world-from-camera, so the measure is invariant to a global rotation of
// either set.
inline double relative_rotation_error(const std::vector<CameraParams>& a, const std::vector<CameraParams>& b) {
  if (a.size() != b.size()) throw EvaluationError("evaluation", "camera count mismatch");
  if (a.size() < 2) throw EvaluationError("evaluation", "need at least two cameras");
  auto normalized = [](std::array<double, 4> q) {
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (double& v : q) v /= n;
    return q;
  };
  auto conj = [](std::array<double, 4> q) { return std::array<double, 4>{q[0], -q[1], -q[2], -q[3]}; };
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const auto ra = quaternion_multiply(conj(normalized(a[i].rotation)), normalized(a[j].rotation));
      const auto rb = quaternion_multiply(conj(normalized(b[i].rotation)), normalized(b[j].rotation));
      const auto d = quaternion_multiply(conj(ra), rb);
      const double vec = std::sqrt(d[1] * d[1] + d[2] * d[2] + d[3] * d[3]);
      sum += 2.0 * std::atan2(vec, std::abs(d[0])) * 180.0 / std::numbers::pi;
      ++pairs;
    }
  }
  return sum / pairs;
}

// Pixel-unit L2D of the current state: mean over ordered visible pairs of the
// squared pixel distance between the reprojection and the (deformed) label.
inline double loss_2d(const Scene& scene, const AlignmentState& state) {
  const AlignmentProblem p = make_problem(scene, state);
  const CorrespondenceSet& corrs = scene.correspondences;
  const auto n = static_cast<std::size_t>(scene.n_images());
  std::vector<Mat3<double>> rot;
  for (const auto& c : state.cams) rot.push_back(rotation_from_quaternion(c.rotation));
  std::vector<std::vector<Vec3d>> pts(n, std::vector<Vec3d>(static_cast<std::size_t>(corrs.n_points())));
  std::vector<std::vector<Vec2d>> obs(n, std::vector<Vec2d>(static_cast<std::size_t>(corrs.n_points())));
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < corrs.n_points(); ++c) {
      const int v = p.vertex_of[i][static_cast<std::size_t>(c)];
      if (v < 0) continue;
      const Vec3d& pos = state.meshes[i].positions[static_cast<std::size_t>(v)];
      obs[i][static_cast<std::size_t>(c)] = {pos.x, pos.y};
      pts[i][static_cast<std::size_t>(c)] =
          backproject(intrinsic_coords(scene.images[i], {pos.x, pos.y}), pos.z, state.cams[i], rot[i]);
    }
  }
  return loss_2d_term(pts, obs, state.cams, rot, scene, std::vector<double>(n, 1.0));
}

// --- traditional bundle adjustment ---------------------------------------------

inline constexpr std::size_t kBaCameraBlock = 9;  // q(4) t(3) fx fy

struct BaProblem {
  const Scene* scene = nullptr;
  std::size_t n_params = 0;
  std::size_t point_offset = 0;
};

// Mean squared reprojection error over visible observations, in units of
// pixels / max(w, h) of the observing image.
template <class T>
T ba_reprojection_term(const BaProblem& p, std::span<const T> x) {
  const Scene& scene = *p.scene;
  const CorrespondenceSet& corrs = scene.correspondences;
  T sum(0);
  long count = 0;
  for (int i = 0; i < scene.n_images(); ++i) {
    const ImageRecord& rec = scene.images[static_cast<std::size_t>(i)];
    const std::size_t o = kBaCameraBlock * static_cast<std::size_t>(i);
    Camera<T> cam;
    cam.rotation = {x[o], x[o + 1], x[o + 2], x[o + 3]};
    cam.translation = {x[o + 4], x[o + 5], x[o + 6]};
    cam.fx = x[o + 7];
    cam.fy = x[o + 8];
    cam.cx = T(0.5);
    cam.cy = T(0.5);
    const Mat3<T> r = rotation_from_quaternion(cam.rotation);
    const T su(rec.width / rec.max_dim()), sv(rec.height / rec.max_dim());
    for (int c = 0; c < corrs.n_points(); ++c) {
      if (!corrs.visible(i, c)) continue;
      const std::size_t q = p.point_offset + 3 * static_cast<std::size_t>(c);
      const Vec3<T> local = to_camera(Vec3<T>{x[q], x[q + 1], x[q + 2]}, cam, r);
      const T z = local.z > T(1e-6) ? local.z : T(1e-6);
      const Vec2d obs = corrs.pixel(i, c);
      const T du = (cam.fx * local.x / z + cam.cx) * su - T(obs.x / rec.max_dim());
      const T dv = (cam.fy * local.y / z + cam.cy) * sv - T(obs.y / rec.max_dim());
      sum += du * du + dv * dv;
      ++count;
    }
  }
  return count == 0 ? T(0) : sum / T(static_cast<double>(count));
}

inline Objective ba_objective(const BaProblem& problem) {
  ParameterLayout layout;
  layout.group.assign(problem.n_params, Group::Points);
  for (std::size_t i = 0; i < problem.point_offset / kBaCameraBlock; ++i) {
    const std::size_t o = kBaCameraBlock * i;
    for (std::size_t k = 0; k < 4; ++k) layout.group[o + k] = Group::Rotation;
    for (std::size_t k = 4; k < 7; ++k) layout.group[o + k] = Group::Translation;
    layout.group[o + 7] = layout.group[o + 8] = Group::Intrinsics;
    layout.quaternions.push_back(o);
    layout.positive.push_back(o + 7);
    layout.positive.push_back(o + 8);
  }
  layout.frozen.assign(static_cast<std::size_t>(Group::Count), 0);
  auto eval = [problem](std::span<const ad::Var> x, LossBreakdown* b) {
    const ad::Var total = ba_reprojection_term(problem, x);
    if (b != nullptr) {
      b->terms = {{"reprojection", total.value()}};
      b->total = total.value();
    }
    return total;
  };
  auto eval_long = [problem](std::span<const long double> x) { return ba_reprojection_term(problem, x); };
  return Objective(eval, eval_long, std::move(layout));
}

struct BaResult {
  std::vector<CameraParams> cams;  // s = 1, eta = 0
  std::vector<Vec3d> points;       // per correspondence
  double mean_reprojection_px = 0.0;
  LossTrace trace;
};

inline std::vector<double> ba_pack(const BaProblem& p, const std::vector<CameraParams>& cams,
                                   const std::vector<Vec3d>& points) {
  std::vector<double> x(p.n_params, 0.0);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const std::size_t o = kBaCameraBlock * i;
    for (std::size_t k = 0; k < 4; ++k) x[o + k] = cams[i].rotation[k];
    x[o + 4] = cams[i].translation.x;
    x[o + 5] = cams[i].translation.y;
    x[o + 6] = cams[i].translation.z;
    x[o + 7] = cams[i].fx;
    x[o + 8] = cams[i].fy;
  }
  for (std::size_t c = 0; c < points.size(); ++c) {
    x[p.point_offset + 3 * c] = points[c].x;
    x[p.point_offset + 3 * c + 1] = points[c].y;
    x[p.point_offset + 3 * c + 2] = points[c].z;
  }
  return x;
}

inline BaProblem make_ba_problem(const Scene& scene) {
  BaProblem p;
  p.scene = &scene;
  p.point_offset = kBaCameraBlock * static_cast<std::size_t>(scene.n_images());
  p.n_params = p.point_offset + 3 * static_cast<std::size_t>(scene.correspondences.n_points());
  return p;
}

// Joint optimization of cameras and one world point per correspondence on
// reprojection error alone. Cameras start as in align(); each point starts on
// the ray of its first observing image at that image's sampled depth.
inline BaResult traditional_ba(const Scene& scene, const OptimizerConfig& config) {
  const CorrespondenceSet& corrs = scene.correspondences;
  if (scene.n_images() < 2) throw DegenerateInputError("evaluation", "bundle adjustment needs at least two images");
  if (corrs.n_points() == 0) throw DegenerateInputError("evaluation", "bundle adjustment needs correspondences");
  for (int c = 0; c < corrs.n_points(); ++c) {
    if (corrs.view_count(c) < 2) {
      throw DegenerateInputError("evaluation", "correspondence " + std::to_string(corrs.id(c)) +
                                                   " is seen in fewer than two images");
    }
  }
  const AlignmentState init = initial_state(scene, config, LossWeights{});
  BaResult result;
  result.cams = init.cams;
  for (int c = 0; c < corrs.n_points(); ++c) {
    int first = 0;
    while (!corrs.visible(first, c)) ++first;
    const ImageRecord& rec = scene.images[static_cast<std::size_t>(first)];
    const Vec2d px = corrs.pixel(first, c);
    result.points.push_back(
        backproject(intrinsic_coords(rec, px), sample_depth(rec, px), result.cams[static_cast<std::size_t>(first)]));
  }
  const BaProblem problem = make_ba_problem(scene);
  const Objective objective = ba_objective(problem);
  std::vector<double> x = ba_pack(problem, result.cams, result.points);
  OptimizerConfig ba_config = config;
  ba_config.lr_rotation *= config.ba_camera_lr_scale;
  ba_config.lr_translation *= config.ba_camera_lr_scale;
  ba_config.lr_intrinsics *= config.ba_camera_lr_scale;
  result.trace = minimize(objective, x, config.ba_iterations, ba_config);
  for (std::size_t i = 0; i < result.cams.size(); ++i) {
    const std::size_t o = kBaCameraBlock * i;
    CameraParams& cam = result.cams[i];
    for (std::size_t k = 0; k < 4; ++k) cam.rotation[k] = x[o + k];
    cam.translation = {x[o + 4], x[o + 5], x[o + 6]};
    cam.fx = x[o + 7];
    cam.fy = x[o + 8];
  }
  for (std::size_t c = 0; c < result.points.size(); ++c) {
    result.points[c] = {x[problem.point_offset + 3 * c], x[problem.point_offset + 3 * c + 1],
                        x[problem.point_offset + 3 * c + 2]};
  }
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < scene.n_images(); ++i) {
    const ImageRecord& rec = scene.images[static_cast<std::size_t>(i)];
    for (int c = 0; c < corrs.n_points(); ++c) {
      if (!corrs.visible(i, c)) continue;
      const Vec2d uv = project(result.points[static_cast<std::size_t>(c)], result.cams[static_cast<std::size_t>(i)]);
      sum += std::sqrt(squared_norm(pixel_coords(rec, uv) - corrs.pixel(i, c)));
      ++count;
    }
  }
  result.mean_reprojection_px = sum / count;
  return result;
}

// Alignment state for scoring a BA result with pcc(): meshes at rest and the
// sampled depth used as is (s = 1, eta = 0) at the recovered cameras.
inline AlignmentState ba_alignment_state(const Scene& scene, const BaResult& ba) {
  AlignmentState state;
  state.cams = ba.cams;
  for (int i = 0; i < scene.n_images(); ++i) state.meshes.push_back(build_mesh(scene, i));
  return state;
}

}  // namespace toon3d
