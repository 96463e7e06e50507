#pragma once

// Pinhole-with-depth-affine camera model and the camera-stage losses.
//
// Intrinsics live in per-axis normalized image coordinates: a pixel (u, v) of
// a w x h image maps to (u / w, v / h), so the principal point of a centered
// camera is (0.5, 0.5) and a square-pixel camera has fx / fy = h / w.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "toon3d/ad.hpp"
#include "toon3d/geometry.hpp"
#include "toon3d/scene.hpp"

namespace toon3d {

template <class T>
struct Camera {
  std::array<T, 4> rotation{T(1), T(0), T(0), T(0)};  // world-from-camera (w, x, y, z)
  Vec3<T> translation{};
  T fx = T(1), fy = T(1);
  T cx = T(0), cy = T(0);  // fixed during optimization
  T scale = T(1);          // depth scale s
  T shift = T(0);          // depth shift eta
};

using CameraParams = Camera<double>;

inline bool is_valid(const CameraParams& cam) {
  const auto& q = cam.rotation;
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  return std::abs(n - 1.0) <= 1e-9 && cam.fx > 0.0 && cam.fy > 0.0;
}

// p = R * (K^-1 [u v 1]^T * (s d + eta)) + t
template <class T>
Vec3<T> backproject(const Vec2<T>& uv, const T& depth, const Camera<T>& cam, const Mat3<T>& rotation) {
  const T z = cam.scale * depth + cam.shift;
  const Vec3<T> local{(uv.x - cam.cx) / cam.fx * z, (uv.y - cam.cy) / cam.fy * z, z};
  return rotation * local + cam.translation;
}

template <class T>
Vec3<T> backproject(const Vec2<T>& uv, const T& depth, const Camera<T>& cam) {
  return backproject(uv, depth, cam, rotation_from_quaternion(cam.rotation));
}

// Camera-frame point of a world point.
template <class T>
Vec3<T> to_camera(const Vec3<T>& p, const Camera<T>& cam, const Mat3<T>& rotation) {
  return rotation.transpose_times(p - cam.translation);
}

// Perspective projection into the camera's intrinsic coordinates. `depth_out`
// receives the camera-frame z.
template <class T>
Vec2<T> project(const Vec3<T>& p, const Camera<T>& cam, const Mat3<T>& rotation, T* depth_out = nullptr) {
  const Vec3<T> local = to_camera(p, cam, rotation);
  if (depth_out != nullptr) *depth_out = local.z;
  return {cam.fx * local.x / local.z + cam.cx, cam.fy * local.y / local.z + cam.cy};
}

template <class T>
Vec2<T> project(const Vec3<T>& p, const Camera<T>& cam, T* depth_out = nullptr) {
  return project(p, cam, rotation_from_quaternion(cam.rotation), depth_out);
}

struct LossWeights {
  double scale = 1.0;
  double aspect = 10.0;
  double focal = 3e-5;
  double neg = 100.0;
  double arap2d = 1.0;
  double flip = 10.0;
  double z = 0.1;

  bool valid() const { return scale >= 0 && aspect >= 0 && focal >= 0 && neg >= 0 && arap2d >= 0 && flip >= 0 && z >= 0; }
};

// Named term values plus the weighted total.
struct LossBreakdown {
  std::map<std::string, double> terms;
  double total = 0.0;

  double operator[](const std::string& name) const {
    auto it = terms.find(name);
    return it == terms.end() ? 0.0 : it->second;
  }
};

// --- templated term kernels --------------------------------------------------

// Points indexed [image][correspondence]; a term is included when both
// observations are visible.
template <class T>
T loss_3d_term(const std::vector<std::vector<Vec3<T>>>& points, const CorrespondenceSet& corrs) {
  T sum(0);
  long count = 0;
  for (int c = 0; c < corrs.n_points(); ++c) {
    for (int i = 0; i < corrs.n_images(); ++i) {
      if (!corrs.visible(i, c)) continue;
      for (int j = 0; j < i; ++j) {
        if (!corrs.visible(j, c)) continue;
        sum += squared_norm(points[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] -
                            points[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)]);
        ++count;
      }
    }
  }
  return count == 0 ? T(0) : sum / T(static_cast<double>(count));
}

template <class T>
struct CameraRegularizers {
  T scale{}, aspect{}, focal{}, neg_scale{}, neg_shift{};
};

// dims: (width, height) per camera.
template <class T>
CameraRegularizers<T> camera_regularizer_terms(const std::vector<Camera<T>>& cams,
                                               const std::vector<std::array<int, 2>>& dims) {
  CameraRegularizers<T> out;
  const T n(static_cast<double>(cams.size()));
  T mean_s(0), neg_s(0), neg_eta(0);
  out.aspect = T(0);
  out.focal = T(0);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const Camera<T>& cam = cams[i];
    mean_s += cam.scale;
    neg_s += ad::max0(-cam.scale);
    neg_eta += ad::max0(-cam.shift);
    const T ratio = cam.fx / cam.fy - T(static_cast<double>(dims[i][1]) / static_cast<double>(dims[i][0]));
    out.aspect += ratio * ratio;
    out.focal += cam.fx + cam.fy;
  }
  const T dev = T(1) - mean_s / n;
  out.scale = dev * dev;
  neg_s = neg_s / n;
  neg_eta = neg_eta / n;
  out.neg_scale = neg_s * neg_s;
  out.neg_shift = neg_eta * neg_eta;
  return out;
}

// --- public double-valued API --------------------------------------------------

// Per-axis normalized coordinates of a pixel.
inline Vec2d intrinsic_coords(const ImageRecord& rec, Vec2d pixel) {
  return {pixel.x / rec.width, pixel.y / rec.height};
}

inline Vec2d pixel_coords(const ImageRecord& rec, Vec2d uv) { return {uv.x * rec.width, uv.y * rec.height}; }

// Initial intrinsics: square pixels, principal point at the image center, and
// a focal length equal to the larger image dimension.
inline CameraParams default_camera(const ImageRecord& rec) {
  CameraParams cam;
  const double m = rec.max_dim();
  cam.fx = m / rec.width;
  cam.fy = m / rec.height;
  cam.cx = 0.5;
  cam.cy = 0.5;
  return cam;
}

// depths_at_points[i][c] is read for visible observations only.
inline double loss_3d(const Scene& scene, const std::vector<CameraParams>& cams,
                      const std::vector<std::vector<double>>& depths_at_points) {
  const CorrespondenceSet& corrs = scene.correspondences;
  std::vector<std::vector<Vec3d>> pts(static_cast<std::size_t>(corrs.n_images()),
                                      std::vector<Vec3d>(static_cast<std::size_t>(corrs.n_points())));
  for (int i = 0; i < corrs.n_images(); ++i) {
    const auto& cam = cams[static_cast<std::size_t>(i)];
    const Mat3<double> r = rotation_from_quaternion(cam.rotation);
    for (int c = 0; c < corrs.n_points(); ++c) {
      if (!corrs.visible(i, c)) continue;
      const Vec2d uv = intrinsic_coords(scene.images[static_cast<std::size_t>(i)], corrs.pixel(i, c));
      pts[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
          backproject(uv, depths_at_points[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)], cam, r);
    }
  }
  return loss_3d_term(pts, corrs);
}

inline std::vector<std::vector<double>> sampled_correspondence_depths(const Scene& scene) {
  const CorrespondenceSet& corrs = scene.correspondences;
  std::vector<std::vector<double>> d(static_cast<std::size_t>(corrs.n_images()),
                                     std::vector<double>(static_cast<std::size_t>(corrs.n_points()), 0.0));
  for (int i = 0; i < corrs.n_images(); ++i) {
    for (int c = 0; c < corrs.n_points(); ++c) {
      if (corrs.visible(i, c)) {
        d[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
            sample_depth(scene.images[static_cast<std::size_t>(i)], corrs.pixel(i, c));
      }
    }
  }
  return d;
}

// Terms: "scale", "aspect", "focal", "neg" (= neg(s) + neg(eta)); total is the
// unweighted sum.
inline LossBreakdown camera_regularizers(const std::vector<CameraParams>& cams,
                                         const std::vector<std::array<int, 2>>& image_dims) {
  const auto r = camera_regularizer_terms(cams, image_dims);
  LossBreakdown out;
  out.terms = {{"scale", r.scale}, {"aspect", r.aspect}, {"focal", r.focal}, {"neg", r.neg_scale + r.neg_shift}};
  out.total = r.scale + r.aspect + r.focal + r.neg_scale + r.neg_shift;
  return out;
}

inline std::vector<std::array<int, 2>> image_dims(const Scene& scene) {
  std::vector<std::array<int, 2>> dims;
  for (const auto& rec : scene.images) dims.push_back({rec.width, rec.height});
  return dims;
}

// J_camera with depths sampled from the (normalized) depth rasters.
inline LossBreakdown camera_objective(const Scene& scene, const std::vector<CameraParams>& cams,
                                      const LossWeights& w) {
  const double l3d = loss_3d(scene, cams, sampled_correspondence_depths(scene));
  const auto r = camera_regularizer_terms(cams, image_dims(scene));
  LossBreakdown out;
  out.terms = {{"l3d", l3d},       {"scale", r.scale},         {"aspect", r.aspect},
               {"focal", r.focal}, {"neg", r.neg_scale + r.neg_shift}};
  out.total = l3d + w.scale * r.scale + w.aspect * r.aspect + w.focal * r.focal + w.neg * (r.neg_scale + r.neg_shift);
  return out;
}

}  // namespace toon3d
