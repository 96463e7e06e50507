#pragma once

// Synthetic scenes with known cameras: a textured box room with a few
// furniture blocks, rendered by exact per-pixel ray casting from cameras on
// an arc, plus labeled correspondences and an optional smooth per-image
// inconsistency warp.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "toon3d/camera.hpp"
#include "toon3d/error.hpp"
#include "toon3d/optimizer.hpp"
#include "toon3d/output.hpp"
#include "toon3d/scene.hpp"

namespace toon3d::synth {

enum class Texture { Checkerboard, Gradient };

struct SyntheticSpec {
  Eigen::Vector3d room_min{-3.5, -1.5, 0.0};  // y points down
  Eigen::Vector3d room_max{3.5, 1.5, 9.0};
  Texture texture = Texture::Checkerboard;
  int n_cameras = 5;
  int width = 400;
  int height = 300;
  double focal_px = 300.0;
  Eigen::Vector3d target{0.0, 0.3, 5.0};  // cameras look at this point
  double ring_radius = 4.0;
  double ring_arc_degrees = 60.0;   // total yaw spread across the arc
  double placement_jitter = 0.15;   // random offsets of positions (scene units)
  int n_correspondences = 40;
  double inconsistency = 0.0;       // delta, fraction of max(w, h)
  double depth_noise = 0.0;         // smooth additive depth error, fraction of the image's max depth
  double min_separation_px = 12.0;  // between labeled points in one image
  double border_margin_px = 6.0;
  double depth_tolerance = 3.5e-7;  // relative, bilinear raster depth vs. true depth at a label
  std::uint64_t seed = 0;

  bool valid() const {
    return n_cameras >= 2 && inconsistency >= 0.0 && depth_noise >= 0.0 && width > 1 && height > 1 && focal_px > 0 &&
           n_correspondences >= 0;
  }
};

struct GroundTruth {
  std::vector<CameraParams> cams;  // metric scene units, s = 1, eta = 0
  std::vector<int> point_ids;
  std::vector<Vec3d> points;
};

struct Box {
  Eigen::Vector3d lo, hi;
};

namespace detail {

struct Hit {
  double t;
  Eigen::Vector3d p;
  int face;  // 0..5 room walls, 6+ furniture faces
};

// Furniture placed relative to the room.
inline std::vector<Box> furniture(const SyntheticSpec& s) {
  const double floor = s.room_max.y();
  return {Box{{-1.5, floor - 1.0, 5.0}, {-0.5, floor, 6.0}},
          Box{{1.0, floor - 1.7, 6.5}, {2.0, floor, 7.5}},
          Box{{-2.8, floor - 0.6, 3.0}, {-2.0, floor, 4.2}}};
}

inline std::optional<Hit> cast(const SyntheticSpec& s, const std::vector<Box>& boxes, const Eigen::Vector3d& o,
                               const Eigen::Vector3d& d) {
  std::optional<Hit> best;
  // Room interior: nearest exit through any wall.
  for (int axis = 0; axis < 3; ++axis) {
    if (d[axis] == 0.0) continue;
    const double bound = d[axis] > 0.0 ? s.room_max[axis] : s.room_min[axis];
    const double t = (bound - o[axis]) / d[axis];
    if (t <= 0.0) continue;
    if (!best || t < best->t) best = Hit{t, o + t * d, 2 * axis + (d[axis] > 0.0 ? 1 : 0)};
  }
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    int entry_axis = -1;
    bool miss = false;
    for (int axis = 0; axis < 3; ++axis) {
      if (d[axis] == 0.0) {
        if (o[axis] < boxes[b].lo[axis] || o[axis] > boxes[b].hi[axis]) miss = true;
        continue;
      }
      double ta = (boxes[b].lo[axis] - o[axis]) / d[axis];
      double tb = (boxes[b].hi[axis] - o[axis]) / d[axis];
      if (ta > tb) std::swap(ta, tb);
      if (ta > t0) {
        t0 = ta;
        entry_axis = axis;
      }
      t1 = std::min(t1, tb);
    }
    if (miss || entry_axis < 0 || t0 > t1 || t0 <= 0.0) continue;
    if (!best || t0 < best->t) {
      best = Hit{t0, o + t0 * d, 6 + 6 * static_cast<int>(b) + 2 * entry_axis + (d[entry_axis] > 0.0 ? 0 : 1)};
    }
  }
  return best;
}

inline std::array<std::uint8_t, 3> shade(const SyntheticSpec& s, const Hit& hit) {
  static constexpr std::array<std::array<int, 3>, 8> palette{{{220, 80, 60},
                                                              {60, 140, 220},
                                                              {90, 200, 110},
                                                              {230, 200, 70},
                                                              {170, 90, 200},
                                                              {80, 200, 200},
                                                              {240, 140, 60},
                                                              {150, 150, 150}}};
  const auto& base = palette[static_cast<std::size_t>(hit.face) % palette.size()];
  double k = 1.0;
  if (s.texture == Texture::Checkerboard) {
    const double cell = 0.5;
    const long parity = static_cast<long>(std::floor(hit.p.x() / cell)) + static_cast<long>(std::floor(hit.p.y() / cell)) +
                        static_cast<long>(std::floor(hit.p.z() / cell));
    k = (parity & 1) ? 1.0 : 0.45;
  } else {
    k = 0.55 + 0.45 * std::sin(1.7 * hit.p.x() + 2.3 * hit.p.y() + 1.1 * hit.p.z());
  }
  return {static_cast<std::uint8_t>(std::lround(base[0] * k)), static_cast<std::uint8_t>(std::lround(base[1] * k)),
          static_cast<std::uint8_t>(std::lround(base[2] * k))};
}

inline Eigen::Matrix3d look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - position).normalized();
  const Eigen::Vector3d right = Eigen::Vector3d::UnitY().cross(forward).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return r;
}

inline Mat3<double> to_mat3(const Eigen::Matrix3d& m) {
  Mat3<double> out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = m(r, c);
  return out;
}

inline Eigen::Matrix3d to_eigen(const Mat3<double>& m) {
  Eigen::Matrix3d out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = m(r, c);
  return out;
}

// Smooth field sum_{a,b<3} c_ab cos(a pi u / (w-1)) cos(b pi v / (h-1)).
struct CosineField {
  std::array<double, 9> cx{}, cy{};
  double w = 1, h = 1;

  Vec2d operator()(double u, double v) const {
    Vec2d out{};
    for (int a = 0; a < 3; ++a) {
      const double ca = std::cos(a * std::numbers::pi * u / (w - 1));
      for (int b = 0; b < 3; ++b) {
        const double cb = std::cos(b * std::numbers::pi * v / (h - 1));
        out.x += cx[static_cast<std::size_t>(3 * a + b)] * ca * cb;
        out.y += cy[static_cast<std::size_t>(3 * a + b)] * ca * cb;
      }
    }
    return out;
  }
};

// Random field rescaled so its largest magnitude over the pixel grid equals
// `amplitude` (vector magnitude when `vector_valued`, else the x component).
inline CosineField random_field(std::mt19937_64& rng, int w, int h, double amplitude, bool vector_valued) {
  CosineField f;
  f.w = w;
  f.h = h;
  for (std::size_t k = 0; k < 9; ++k) {
    f.cx[k] = 2.0 * uniform01(rng) - 1.0;
    f.cy[k] = vector_valued ? 2.0 * uniform01(rng) - 1.0 : 0.0;
  }
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec2d d = f(x, y);
      peak = std::max(peak, std::sqrt(squared_norm(d)));
    }
  }
  const double k = peak > 0.0 ? amplitude / peak : 0.0;
  for (std::size_t i = 0; i < 9; ++i) {
    f.cx[i] *= k;
    f.cy[i] *= k;
  }
  return f;
}

}  // namespace detail

inline std::vector<Box> furniture(const SyntheticSpec& s) { return detail::furniture(s); }

// Camera-frame depth of the first surface along the pixel ray, or nullopt.
inline std::optional<std::pair<double, Eigen::Vector3d>> cast_pixel(const SyntheticSpec& spec, const CameraParams& cam,
                                                                    const ImageRecord& rec, Vec2d pixel) {
  const Eigen::Matrix3d r = detail::to_eigen(rotation_from_quaternion(cam.rotation));
  const Eigen::Vector3d local((pixel.x / rec.width - cam.cx) / cam.fx, (pixel.y / rec.height - cam.cy) / cam.fy, 1.0);
  const Eigen::Vector3d o(cam.translation.x, cam.translation.y, cam.translation.z);
  const auto hit = detail::cast(spec, detail::furniture(spec), o, r * local);
  if (!hit) return std::nullopt;
  return std::make_pair(hit->t, hit->p);
}

inline std::pair<Scene, GroundTruth> generate_scene(const SyntheticSpec& spec) {
  if (!spec.valid()) throw Error("synthetic", "invalid synthetic scene specification");
  std::mt19937_64 rng(spec.seed);
  const auto boxes = detail::furniture(spec);
  Scene scene;
  GroundTruth gt;

  for (int k = 0; k < spec.n_cameras; ++k) {
    const double frac = spec.n_cameras == 1 ? 0.5 : static_cast<double>(k) / (spec.n_cameras - 1);
    const double yaw = (frac - 0.5) * spec.ring_arc_degrees * std::numbers::pi / 180.0;
    Eigen::Vector3d pos = spec.target + spec.ring_radius * Eigen::Vector3d(std::sin(yaw), 0.0, -std::cos(yaw));
    pos.y() = -0.2;
    for (int a = 0; a < 3; ++a) pos[a] += spec.placement_jitter * (2.0 * uniform01(rng) - 1.0);
    Eigen::Vector3d target = spec.target;
    for (int a = 0; a < 3; ++a) target[a] += 2.0 * spec.placement_jitter * (2.0 * uniform01(rng) - 1.0);
    CameraParams cam;
    cam.rotation = quaternion_from_rotation(detail::to_mat3(detail::look_at(pos, target)));
    cam.translation = {pos.x(), pos.y(), pos.z()};
    cam.fx = spec.focal_px / spec.width;
    cam.fy = spec.focal_px / spec.height;
    cam.cx = 0.5;
    cam.cy = 0.5;
    gt.cams.push_back(cam);

    ImageRecord rec;
    rec.id = k;
    rec.name = image_name(k);
    rec.width = spec.width;
    rec.height = spec.height;
    rec.rgb = RgbRaster(spec.width, spec.height, 3, 0);
    rec.depth = DepthRaster(spec.width, spec.height, 1, 0.0);
    rec.mask = MaskRaster(spec.width, spec.height, 1, 1);
    const Eigen::Matrix3d rot = detail::to_eigen(rotation_from_quaternion(cam.rotation));
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const Eigen::Vector3d local((static_cast<double>(x) / spec.width - cam.cx) / cam.fx,
                                    (static_cast<double>(y) / spec.height - cam.cy) / cam.fy, 1.0);
        const auto hit = detail::cast(spec, boxes, pos, rot * local);
        if (!hit) continue;
        rec.depth.at(x, y) = hit->t;
        const auto rgb = detail::shade(spec, *hit);
        for (int c = 0; c < 3; ++c) rec.rgb.at(x, y, c) = rgb[static_cast<std::size_t>(c)];
      }
    }
    scene.images.push_back(std::move(rec));
  }

  // Correspondences: surface points seen (unoccluded, away from depth
  // discontinuities and borders) in at least two views.
  const int n = spec.n_cameras;
  const double margin = spec.border_margin_px;
  auto clean_view = [&](int view, Vec2d px, double expected_depth) {
    const ImageRecord& rec = scene.images[static_cast<std::size_t>(view)];
    if (px.x < margin || px.y < margin || px.x > rec.width - 1 - margin || px.y > rec.height - 1 - margin) return false;
    const auto hit = cast_pixel(spec, gt.cams[static_cast<std::size_t>(view)], rec, px);
    if (!hit || std::abs(hit->first - expected_depth) > 1e-9 * expected_depth) return false;
    return std::abs(rec.depth.bilinear(px.x, px.y) - expected_depth) <= spec.depth_tolerance * expected_depth;
  };
  std::vector<std::vector<Observation>> accepted;  // [point][image]
  for (int c = 0; c < spec.n_correspondences; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const int src = (c + attempt) % n;
      const ImageRecord& rec = scene.images[static_cast<std::size_t>(src)];
      // Integer pixels in the source view, where the raster holds the exact depth.
      const Vec2d px{std::round(margin + uniform01(rng) * (rec.width - 1 - 2 * margin)),
                     std::round(margin + uniform01(rng) * (rec.height - 1 - 2 * margin))};
      const auto hit = cast_pixel(spec, gt.cams[static_cast<std::size_t>(src)], rec, px);
      if (!hit) continue;
      const Eigen::Vector3d& world = hit->second;
      std::vector<Observation> obs(static_cast<std::size_t>(n));
      int views = 0;
      bool crowded = false;
      for (int j = 0; j < n; ++j) {
        const CameraParams& cam = gt.cams[static_cast<std::size_t>(j)];
        double zc = 0.0;
        const Vec2d uv = project(Vec3d{world.x(), world.y(), world.z()}, cam, &zc);
        if (zc <= 0.0) continue;
        const Vec2d pj = pixel_coords(scene.images[static_cast<std::size_t>(j)], uv);
        if (!clean_view(j, pj, zc)) continue;
        for (const auto& prev : accepted) {
          const Observation& o = prev[static_cast<std::size_t>(j)];
          if (o.visible && squared_norm(Vec2d{o.u, o.v} - pj) < spec.min_separation_px * spec.min_separation_px) {
            crowded = true;
          }
        }
        obs[static_cast<std::size_t>(j)] = {pj.x, pj.y, true};
        ++views;
      }
      if (crowded || views < 2 || !obs[static_cast<std::size_t>(src)].visible) continue;
      accepted.push_back(std::move(obs));
      gt.point_ids.push_back(c);
      gt.points.push_back({world.x(), world.y(), world.z()});
      placed = true;
    }
    if (!placed) {
      throw Error("synthetic", "could not place correspondence " + std::to_string(c) +
                                   " in two views after 1000 attempts");
    }
  }
  scene.correspondences = CorrespondenceSet(n, static_cast<int>(accepted.size()));
  for (std::size_t c = 0; c < accepted.size(); ++c) {
    for (int i = 0; i < n; ++i) scene.correspondences.at(i, static_cast<int>(c)) = accepted[c][static_cast<std::size_t>(i)];
  }

  if (spec.depth_noise > 0.0) {
    for (auto& rec : scene.images) {
      const double peak = *std::max_element(rec.depth.data().begin(), rec.depth.data().end());
      const auto field = detail::random_field(rng, rec.width, rec.height, spec.depth_noise * peak, false);
      for (int y = 0; y < rec.height; ++y) {
        for (int x = 0; x < rec.width; ++x) rec.depth.at(x, y) += field(x, y).x;
      }
    }
  }
  return {std::move(scene), std::move(gt)};
}

// Warps each image independently by a smooth displacement field whose peak
// magnitude is delta * max(w, h). Labeled pixels move forward with the field;
// rasters are resampled through its inverse. Observations leaving the image
// become invisible and points left with fewer than two views are dropped.
inline Scene perturb_scene(const Scene& scene, double delta, std::uint64_t seed) {
  if (delta < 0.0) throw Error("synthetic", "inconsistency magnitude must be non-negative");
  if (delta == 0.0) return scene;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Scene out = scene;
  CorrespondenceSet& corrs = out.correspondences;
  for (int i = 0; i < out.n_images(); ++i) {
    ImageRecord& rec = out.images[static_cast<std::size_t>(i)];
    const ImageRecord& src = scene.images[static_cast<std::size_t>(i)];
    const auto field = detail::random_field(rng, rec.width, rec.height, delta * rec.max_dim(), true);
    for (int y = 0; y < rec.height; ++y) {
      for (int x = 0; x < rec.width; ++x) {
        Vec2d p{static_cast<double>(x), static_cast<double>(y)};
        for (int it = 0; it < 20; ++it) p = Vec2d{static_cast<double>(x), static_cast<double>(y)} - field(p.x, p.y);
        p.x = std::clamp(p.x, 0.0, static_cast<double>(rec.width - 1));
        p.y = std::clamp(p.y, 0.0, static_cast<double>(rec.height - 1));
        for (int c = 0; c < 3; ++c) {
          rec.rgb.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(src.rgb.bilinear(p.x, p.y, c), 0.0, 255.0)));
        }
        rec.depth.at(x, y) = src.depth.bilinear(p.x, p.y);
        rec.mask.at(x, y) = src.mask.at(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)));
      }
    }
    for (int c = 0; c < corrs.n_points(); ++c) {
      Observation& o = corrs.at(i, c);
      if (!o.visible) continue;
      const Vec2d moved = Vec2d{o.u, o.v} + field(o.u, o.v);
      if (!rec.depth.contains(moved.x, moved.y)) {
        o.visible = false;
        continue;
      }
      o.u = moved.x;
      o.v = moved.y;
    }
  }
  std::vector<int> keep;
  for (int c = 0; c < corrs.n_points(); ++c) {
    if (corrs.view_count(c) >= 2) keep.push_back(c);
  }
  if (static_cast<int>(keep.size()) != corrs.n_points()) out.correspondences = corrs.select(keep);
  return out;
}

// Ground-truth cameras expressed in the units of a depth-normalized scene.
inline std::vector<CameraParams> normalized_cameras(const GroundTruth& gt, double depth_normalizer) {
  std::vector<CameraParams> cams = gt.cams;
  for (auto& c : cams) c.translation = (1.0 / depth_normalizer) * c.translation;
  return cams;
}

// ground_truth.json: true cameras (cameras.json layout, metric units, so
// depth_normalizer is 1) and the true world point of each correspondence id.
inline nlohmann::json ground_truth_to_json(const Scene& scene, const GroundTruth& gt) {
  Scene metric = scene;
  metric.depth_normalizer = 1.0;
  nlohmann::json j = cameras_to_json(metric, gt.cams);
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t k = 0; k < gt.points.size(); ++k) {
    pts.push_back({{"id", gt.point_ids[k]}, {"position", {gt.points[k].x, gt.points[k].y, gt.points[k].z}}});
  }
  j["points"] = pts;
  return j;
}

inline GroundTruth ground_truth_from_json(const Scene& scene, const nlohmann::json& j) {
  GroundTruth gt;
  try {
    gt.cams = cameras_from_json(scene, j);
    for (const auto& p : j.at("points")) {
      gt.point_ids.push_back(p.at("id").get<int>());
      const auto& x = p.at("position");
      gt.points.push_back({x.at(0).get<double>(), x.at(1).get<double>(), x.at(2).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed ground truth: ") + e.what());
  }
  return gt;
}

}  // namespace toon3d::synth
