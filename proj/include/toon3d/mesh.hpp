#pragma once

// Per-image deformable meshes: topology over the labeled correspondences
// plus a boundary ring, the piecewise-rigid regularizers, and dense
// barycentric warping of RGB and depth.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "toon3d/ad.hpp"
#include "toon3d/delaunay.hpp"
#include "toon3d/geometry.hpp"
#include "toon3d/raster.hpp"
#include "toon3d/scene.hpp"

namespace toon3d {

using delaunay::Face;

struct MeshTopology {
  std::vector<Vec2d> vertices0;      // pixel positions at construction
  std::vector<Face> faces;           // orient > 0 at construction
  std::vector<double> areas0;        // signed area per face, in `unit`^2
  std::vector<char> boundary;        // 1 for synthetic boundary vertices
  std::vector<int> source_index;     // input point index per vertex, -1 for boundary
  std::vector<int> input_to_vertex;  // vertex per input point (after merging)
  std::vector<std::string> warnings;
  double unit = 1.0;                 // length unit for regularizers (pixels)
};

struct DeformableMesh {
  MeshTopology topology;
  std::vector<double> z0;           // initial depth per vertex
  std::vector<Vec3d> positions;     // optimized (u, v, z), u and v in pixels

  std::size_t size() const { return positions.size(); }
};

struct Rigid2D {
  double theta = 0.0;
  Vec2d translation{};
  bool degenerate = false;

  Vec2d apply(Vec2d p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * p.x - s * p.y + translation.x, s * p.x + c * p.y + translation.y};
  }
};

template <class T>
T signed_area(const Vec2<T>& a, const Vec2<T>& b, const Vec2<T>& c) {
  return T(0.5) * cross(b - a, c - a);
}

// Synthetic boundary ring over [0, w-1] x [0, h-1]: the four corners plus
// edge points every min(w, h) / 4 pixels.
inline std::vector<Vec2d> boundary_ring(int width, int height) {
  const double xmax = width - 1, ymax = height - 1;
  const double spacing = std::max(1.0, std::min(width, height) / 4.0);
  std::vector<Vec2d> out;
  auto stops = [&](double extent) {
    std::vector<double> s;
    for (double t = 0.0; t < extent - 0.5 * spacing; t += spacing) s.push_back(t);
    s.push_back(extent);
    return s;
  };
  const auto xs = stops(xmax);
  const auto ys = stops(ymax);
  for (double x : xs) out.push_back({x, 0.0});
  for (std::size_t k = 1; k < ys.size(); ++k) out.push_back({xmax, ys[k]});
  for (std::size_t k = xs.size() - 1; k-- > 0;) out.push_back({xs[k], ymax});
  for (std::size_t k = ys.size() - 1; k-- > 1;) out.push_back({0.0, ys[k]});
  return out;
}

// Delaunay mesh over `points` (plus the boundary ring when `with_boundary`).
// Points closer than 0.5 px to an earlier vertex are merged into it.
inline MeshTopology triangulate(std::span<const Vec2d> points, std::array<int, 2> dims, bool with_boundary = true) {
  if (dims[0] <= 0 || dims[1] <= 0) throw DegenerateInputError("mesh", "image dimensions must be positive");
  MeshTopology topo;
  topo.unit = std::max(dims[0], dims[1]);
  topo.input_to_vertex.assign(points.size(), -1);
  auto find_close = [&](Vec2d p) {
    for (std::size_t v = 0; v < topo.vertices0.size(); ++v) {
      if (squared_norm(topo.vertices0[v] - p) < 0.25) return static_cast<int>(v);
    }
    return -1;
  };
  for (std::size_t k = 0; k < points.size(); ++k) {
    const int hit = find_close(points[k]);
    if (hit >= 0) {
      topo.input_to_vertex[k] = hit;
      topo.warnings.push_back("point " + std::to_string(k) + " merged into vertex " + std::to_string(hit) +
                              " (closer than 0.5 px)");
      continue;
    }
    topo.input_to_vertex[k] = static_cast<int>(topo.vertices0.size());
    topo.vertices0.push_back(points[k]);
    topo.boundary.push_back(0);
    topo.source_index.push_back(static_cast<int>(k));
  }
  if (with_boundary) {
    for (const Vec2d& p : boundary_ring(dims[0], dims[1])) {
      if (find_close(p) >= 0) continue;
      topo.vertices0.push_back(p);
      topo.boundary.push_back(1);
      topo.source_index.push_back(-1);
    }
  }
  if (topo.vertices0.size() < 3) throw DegenerateInputError("mesh", "triangulation needs at least 3 distinct points");
  topo.faces = delaunay::triangulate_points(topo.vertices0);
  for (const Face& f : topo.faces) {
    const Vec2d a = (1.0 / topo.unit) * topo.vertices0[static_cast<std::size_t>(f[0])];
    const Vec2d b = (1.0 / topo.unit) * topo.vertices0[static_cast<std::size_t>(f[1])];
    const Vec2d c = (1.0 / topo.unit) * topo.vertices0[static_cast<std::size_t>(f[2])];
    topo.areas0.push_back(signed_area(a, b, c));
  }
  return topo;
}

// Least-squares rotation + translation taking src onto dst.
inline Rigid2D best_fit_rigid_2d(std::span<const Vec2d> src, std::span<const Vec2d> dst) {
  Vec2d cs{}, cd{};
  const double n = static_cast<double>(src.size());
  for (std::size_t k = 0; k < src.size(); ++k) {
    cs = cs + src[k];
    cd = cd + dst[k];
  }
  cs = (1.0 / n) * cs;
  cd = (1.0 / n) * cd;
  double sdot = 0.0, scross = 0.0, spread = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const Vec2d a = src[k] - cs, b = dst[k] - cd;
    sdot += dot(a, b);
    scross += cross(a, b);
    spread += squared_norm(a);
  }
  Rigid2D out;
  if (spread == 0.0) {
    out.degenerate = true;
    out.translation = cd - cs;
    return out;
  }
  out.theta = std::atan2(scross, sdot);
  const double c = std::cos(out.theta), s = std::sin(out.theta);
  out.translation = cd - Vec2d{c * cs.x - s * cs.y, s * cs.x + c * cs.y};
  return out;
}

// --- templated kernels (coordinates already in mesh units) -------------------

// min over rotations and translations of sum |cur_k - A rest_k|^2, in closed
// form: |cur~|^2 + |rest~|^2 - 2 sqrt(dot^2 + cross^2) about the centroids.
template <class T>
T arap_face_residual(const std::array<Vec2<T>, 3>& rest, const std::array<Vec2<T>, 3>& cur) {
  const T third(1.0 / 3.0);
  const Vec2<T> cr = third * (rest[0] + rest[1] + rest[2]);
  const Vec2<T> cc = third * (cur[0] + cur[1] + cur[2]);
  T sdot(0), scross(0), nr(0), nc(0);
  for (std::size_t k = 0; k < 3; ++k) {
    const Vec2<T> a = rest[k] - cr, b = cur[k] - cc;
    sdot += dot(a, b);
    scross += cross(a, b);
    nr += squared_norm(a);
    nc += squared_norm(b);
  }
  return nr + nc - T(2) * ad::sqrt_of(sdot * sdot + scross * scross);
}

template <class T>
T flip_face_penalty(const std::array<Vec2<T>, 3>& cur, double area0) {
  const T det = signed_area(cur[0], cur[1], cur[2]);
  const T h = ad::min0(det - T(0.1 * area0));
  return h * h;
}

// --- public double-valued API ---------------------------------------------------

inline std::array<Vec2d, 3> face_points(const std::vector<Vec2d>& verts, const Face& f, double unit) {
  return {(1.0 / unit) * verts[static_cast<std::size_t>(f[0])], (1.0 / unit) * verts[static_cast<std::size_t>(f[1])],
          (1.0 / unit) * verts[static_cast<std::size_t>(f[2])]};
}

inline std::vector<Vec2d> current_xy(const DeformableMesh& mesh) {
  std::vector<Vec2d> out;
  out.reserve(mesh.positions.size());
  for (const auto& p : mesh.positions) out.push_back({p.x, p.y});
  return out;
}

// (1/N) sum_i (1/|F_i|) sum_f residual, measured on image-plane vertex
// positions in units of topology.unit.
inline double loss_arap2d(const std::vector<DeformableMesh>& meshes) {
  if (meshes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& mesh : meshes) {
    const auto& topo = mesh.topology;
    if (topo.faces.empty()) continue;
    const auto cur = current_xy(mesh);
    double sum = 0.0;
    for (const Face& f : topo.faces) {
      sum += arap_face_residual(face_points(topo.vertices0, f, topo.unit), face_points(cur, f, topo.unit));
    }
    total += sum / static_cast<double>(topo.faces.size());
  }
  return total / static_cast<double>(meshes.size());
}

inline double loss_flip(const std::vector<DeformableMesh>& meshes) {
  if (meshes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& mesh : meshes) {
    const auto& topo = mesh.topology;
    if (topo.faces.empty()) continue;
    const auto cur = current_xy(mesh);
    double sum = 0.0;
    for (std::size_t k = 0; k < topo.faces.size(); ++k) {
      sum += flip_face_penalty(face_points(cur, topo.faces[k], topo.unit), topo.areas0[k]);
    }
    total += sum / static_cast<double>(topo.faces.size());
  }
  return total / static_cast<double>(meshes.size());
}

// Mean absolute vertex depth deviation per image, averaged over images.
inline double loss_z(const std::vector<DeformableMesh>& meshes) {
  if (meshes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& mesh : meshes) {
    if (mesh.positions.empty()) continue;
    double sum = 0.0;
    for (std::size_t k = 0; k < mesh.positions.size(); ++k) sum += std::abs(mesh.positions[k].z - mesh.z0[k]);
    total += sum / static_cast<double>(mesh.positions.size());
  }
  return total / static_cast<double>(meshes.size());
}

// Mesh for image `image` over its visible correspondences. `vertex_of`
// receives the vertex index per correspondence (-1 when not visible).
inline DeformableMesh build_mesh(const Scene& scene, int image, std::vector<int>* vertex_of = nullptr) {
  const ImageRecord& rec = scene.images[static_cast<std::size_t>(image)];
  const CorrespondenceSet& corrs = scene.correspondences;
  std::vector<Vec2d> pts;
  std::vector<int> which;
  for (int c = 0; c < corrs.n_points(); ++c) {
    if (!corrs.visible(image, c)) continue;
    pts.push_back(corrs.pixel(image, c));
    which.push_back(c);
  }
  DeformableMesh mesh;
  mesh.topology = triangulate(pts, {rec.width, rec.height}, true);
  for (const Vec2d& v : mesh.topology.vertices0) {
    const double z = sample_depth(rec, v);
    mesh.z0.push_back(z);
    mesh.positions.push_back({v.x, v.y, z});
  }
  if (vertex_of != nullptr) {
    vertex_of->assign(static_cast<std::size_t>(corrs.n_points()), -1);
    for (std::size_t k = 0; k < which.size(); ++k) {
      (*vertex_of)[static_cast<std::size_t>(which[k])] = mesh.topology.input_to_vertex[k];
    }
  }
  return mesh;
}

// Uniform-grid point location over a set of triangles. Ties between faces
// go to the lowest face index; faces with non-positive area are skipped.
class FaceLocator {
 public:
  FaceLocator(const std::vector<Vec2d>& verts, const std::vector<Face>& faces, double cell = 16.0)
      : verts_(verts), faces_(faces), cell_(cell) {
    if (verts.empty()) return;
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -x0;
    for (const auto& v : verts) {
      x0 = std::min(x0, v.x);
      y0 = std::min(y0, v.y);
      x1 = std::max(x1, v.x);
      y1 = std::max(y1, v.y);
    }
    origin_ = {x0, y0};
    nx_ = std::max(1, static_cast<int>(std::ceil((x1 - x0) / cell_)) + 1);
    ny_ = std::max(1, static_cast<int>(std::ceil((y1 - y0) / cell_)) + 1);
    cells_.assign(static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_), {});
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& a = verts_[static_cast<std::size_t>(faces_[f][0])];
      const auto& b = verts_[static_cast<std::size_t>(faces_[f][1])];
      const auto& c = verts_[static_cast<std::size_t>(faces_[f][2])];
      if (signed_area(a, b, c) <= 0.0) continue;
      const int cx0 = cell_x(std::min({a.x, b.x, c.x})), cx1 = cell_x(std::max({a.x, b.x, c.x}));
      const int cy0 = cell_y(std::min({a.y, b.y, c.y})), cy1 = cell_y(std::max({a.y, b.y, c.y}));
      for (int y = cy0; y <= cy1; ++y) {
        for (int x = cx0; x <= cx1; ++x) cells_[static_cast<std::size_t>(y * nx_ + x)].push_back(static_cast<int>(f));
      }
    }
  }

  struct Hit {
    int face;
    std::array<double, 3> bary;
  };

  std::optional<Hit> locate(Vec2d p) const {
    if (cells_.empty()) return std::nullopt;
    const int x = cell_x(p.x), y = cell_y(p.y);
    if (p.x < origin_.x - 1e-9 || p.y < origin_.y - 1e-9 || x >= nx_ || y >= ny_) return std::nullopt;
    constexpr double kTol = 1e-9;
    for (int f : cells_[static_cast<std::size_t>(y * nx_ + x)]) {
      const auto& face = faces_[static_cast<std::size_t>(f)];
      const Vec2d a = verts_[static_cast<std::size_t>(face[0])];
      const Vec2d b = verts_[static_cast<std::size_t>(face[1])];
      const Vec2d c = verts_[static_cast<std::size_t>(face[2])];
      const double area = cross(b - a, c - a);
      const double l0 = cross(b - p, c - p) / area;
      const double l1 = cross(c - p, a - p) / area;
      const double l2 = 1.0 - l0 - l1;
      if (l0 >= -kTol && l1 >= -kTol && l2 >= -kTol) return Hit{f, {l0, l1, l2}};
    }
    return std::nullopt;
  }

 private:
  int cell_x(double x) const { return std::clamp(static_cast<int>(std::floor((x - origin_.x) / cell_)), 0, nx_ - 1); }
  int cell_y(double y) const { return std::clamp(static_cast<int>(std::floor((y - origin_.y) / cell_)), 0, ny_ - 1); }

  const std::vector<Vec2d>& verts_;
  const std::vector<Face>& faces_;
  double cell_;
  Vec2d origin_{};
  int nx_ = 0, ny_ = 0;
  std::vector<std::vector<int>> cells_;
};

struct WarpResult {
  RgbRaster rgb;
  DepthRaster depth;
  MaskRaster validity;  // 1 where a non-flipped face covers the pixel
  MaskRaster mask;      // source transient mask carried through the warp
};

inline void parallel_rows(int rows, int threads, const auto& fn) {
  threads = std::max(1, std::min(threads, rows));
  if (threads == 1) {
    for (int y = 0; y < rows; ++y) fn(y);
    return;
  }
  std::vector<std::jthread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int y = t; y < rows; y += threads) fn(y);
    });
  }
}

// Inverse barycentric warp: each destination pixel is located in the
// deformed mesh and sampled from the source at the matching rest position.
inline WarpResult warp_dense(const ImageRecord& record, const DeformableMesh& mesh, int threads = 1) {
  const int w = record.width, h = record.height;
  WarpResult out{RgbRaster(w, h, 3, 0), DepthRaster(w, h, 1, 0.0), MaskRaster(w, h, 1, 0), MaskRaster(w, h, 1, 0)};
  const auto cur = current_xy(mesh);
  const FaceLocator locator(cur, mesh.topology.faces);
  const auto& rest = mesh.topology.vertices0;
  parallel_rows(h, threads, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const auto hit = locator.locate({static_cast<double>(x), static_cast<double>(y)});
      if (!hit) continue;
      const Face& f = mesh.topology.faces[static_cast<std::size_t>(hit->face)];
      Vec2d src{};
      double dz = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const auto v = static_cast<std::size_t>(f[k]);
        src = src + hit->bary[k] * rest[v];
        dz += hit->bary[k] * (mesh.positions[v].z - mesh.z0[v]);
      }
      // Barycentric round-off would otherwise blur an identity warp.
      if (std::abs(src.x - std::round(src.x)) < 1e-9) src.x = std::round(src.x);
      if (std::abs(src.y - std::round(src.y)) < 1e-9) src.y = std::round(src.y);
      src.x = std::clamp(src.x, 0.0, static_cast<double>(w - 1));
      src.y = std::clamp(src.y, 0.0, static_cast<double>(h - 1));
      for (int ch = 0; ch < 3; ++ch) {
        const double val = record.rgb.bilinear(src.x, src.y, ch);
        out.rgb.at(x, y, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 255.0)));
      }
      out.depth.at(x, y) = record.depth.bilinear(src.x, src.y) + dz;
      out.validity.at(x, y) = 1;
      out.mask.at(x, y) = record.mask.at(static_cast<int>(std::lround(src.x)), static_cast<int>(std::lround(src.y)));
    }
  });
  return out;
}

// Forward map of a source pixel through the deformation: its new image
// position and the depth offset at that position.
struct ForwardWarp {
  Vec2d pixel;
  double depth_offset;
};

inline std::optional<ForwardWarp> forward_warp(const DeformableMesh& mesh, Vec2d pixel) {
  const FaceLocator locator(mesh.topology.vertices0, mesh.topology.faces);
  const auto hit = locator.locate(pixel);
  if (!hit) return std::nullopt;
  const Face& f = mesh.topology.faces[static_cast<std::size_t>(hit->face)];
  ForwardWarp out{{0.0, 0.0}, 0.0};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto v = static_cast<std::size_t>(f[k]);
    out.pixel = out.pixel + hit->bary[k] * Vec2d{mesh.positions[v].x, mesh.positions[v].y};
    out.depth_offset += hit->bary[k] * (mesh.positions[v].z - mesh.z0[v]);
  }
  return out;
}

// Per-pixel absolute RGB difference between two rasters of equal shape.
inline RgbRaster difference_image(const RgbRaster& a, const RgbRaster& b) {
  RgbRaster out(a.width(), a.height(), 3, 0);
  for (std::size_t k = 0; k < a.data().size(); ++k) {
    out.data()[k] = static_cast<std::uint8_t>(std::abs(static_cast<int>(a.data()[k]) - static_cast<int>(b.data()[k])));
  }
  return out;
}

}  // namespace toon3d
