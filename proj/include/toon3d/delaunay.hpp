#pragma once

// Incremental Delaunay triangulation (Bowyer-Watson with a ghost vertex for
// the exterior) on exact integer predicates.
//
// Coordinates are snapped to a 1/256 pixel lattice and all orientation and
// in-circle tests are evaluated exactly in 128-bit integers, so the result
// is deterministic and free of round-off. Cocircular ties are resolved by
// choosing the diagonal incident to the lowest vertex index.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "toon3d/error.hpp"
#include "toon3d/geometry.hpp"

namespace toon3d::delaunay {

using Face = std::array<int, 3>;

inline constexpr double kLattice = 256.0;
inline constexpr double kMaxCoordinate = 65536.0;

struct LatticePoint {
  std::int64_t x, y;
};

inline LatticePoint snap(Vec2d p) {
  if (!(std::abs(p.x) <= kMaxCoordinate && std::abs(p.y) <= kMaxCoordinate)) {
    throw RangeError("mesh", "triangulation coordinate out of supported range");
  }
  return {static_cast<std::int64_t>(std::llround(p.x * kLattice)),
          static_cast<std::int64_t>(std::llround(p.y * kLattice))};
}

// > 0 when c lies to the left of a->b (u right, v down frame: cross > 0).
inline __int128 orient(const LatticePoint& a, const LatticePoint& b, const LatticePoint& c) {
  return static_cast<__int128>(b.x - a.x) * (c.y - a.y) - static_cast<__int128>(b.y - a.y) * (c.x - a.x);
}

// > 0 when d lies strictly inside the circumcircle of (a, b, c), which must
// satisfy orient(a, b, c) > 0.
inline __int128 incircle(const LatticePoint& a, const LatticePoint& b, const LatticePoint& c, const LatticePoint& d) {
  const __int128 adx = a.x - d.x, ady = a.y - d.y;
  const __int128 bdx = b.x - d.x, bdy = b.y - d.y;
  const __int128 cdx = c.x - d.x, cdy = c.y - d.y;
  const __int128 alift = adx * adx + ady * ady;
  const __int128 blift = bdx * bdx + bdy * bdy;
  const __int128 clift = cdx * cdx + cdy * cdy;
  return alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) + clift * (adx * bdy - bdx * ady);
}

namespace detail {

inline constexpr int kGhost = -1;

struct Builder {
  std::vector<LatticePoint> pts;
  std::vector<Face> tris;  // ghost triangles keep kGhost in slot 2
  std::vector<char> alive;

  bool in_circle(const Face& t, int p) const {
    const LatticePoint& q = pts[static_cast<std::size_t>(p)];
    if (t[2] == kGhost) {
      const LatticePoint& a = pts[static_cast<std::size_t>(t[0])];
      const LatticePoint& b = pts[static_cast<std::size_t>(t[1])];
      const __int128 o = orient(a, b, q);
      if (o > 0) return true;
      if (o < 0) return false;
      // Collinear: inside only strictly between a and b.
      const __int128 d = static_cast<__int128>(q.x - a.x) * (b.x - a.x) + static_cast<__int128>(q.y - a.y) * (b.y - a.y);
      const __int128 len = static_cast<__int128>(b.x - a.x) * (b.x - a.x) + static_cast<__int128>(b.y - a.y) * (b.y - a.y);
      return d > 0 && d < len;
    }
    return incircle(pts[static_cast<std::size_t>(t[0])], pts[static_cast<std::size_t>(t[1])],
                    pts[static_cast<std::size_t>(t[2])], q) > 0;
  }

  void add(Face f) {
    if (f[0] == kGhost) f = {f[1], f[2], f[0]};
    else if (f[1] == kGhost) f = {f[2], f[0], f[1]};
    tris.push_back(f);
    alive.push_back(1);
  }

  void insert(int p) {
    std::vector<std::size_t> bad;
    for (std::size_t k = 0; k < tris.size(); ++k) {
      if (alive[k] && in_circle(tris[k], p)) bad.push_back(k);
    }
    std::map<std::pair<int, int>, int> edges;
    for (std::size_t k : bad) {
      const Face& t = tris[k];
      for (int e = 0; e < 3; ++e) edges[{t[static_cast<std::size_t>(e)], t[static_cast<std::size_t>((e + 1) % 3)]}]++;
    }
    for (std::size_t k : bad) alive[k] = 0;
    for (const auto& [edge, count] : edges) {
      if (edges.count({edge.second, edge.first}) != 0) continue;
      add({edge.first, edge.second, p});
    }
  }
};

}  // namespace detail

// Delaunay faces over `points` (indices into `points`), every face with
// orient > 0. Points must be pairwise distinct on the lattice.
inline std::vector<Face> triangulate_points(std::span<const Vec2d> points) {
  detail::Builder b;
  for (const auto& p : points) b.pts.push_back(snap(p));
  const int n = static_cast<int>(points.size());
  if (n < 3) throw DegenerateInputError("mesh", "triangulation needs at least 3 points");

  // Seed triangle: first three non-collinear points in index order.
  int a = 0, c = -1;
  const int bi = 1;
  for (int k = 2; k < n; ++k) {
    if (orient(b.pts[0], b.pts[1], b.pts[static_cast<std::size_t>(k)]) != 0) {
      c = k;
      break;
    }
  }
  if (c < 0) throw DegenerateInputError("mesh", "all triangulation points are collinear");
  Face seed = orient(b.pts[0], b.pts[1], b.pts[static_cast<std::size_t>(c)]) > 0 ? Face{a, bi, c} : Face{bi, a, c};
  b.add(seed);
  b.add({seed[1], seed[0], detail::kGhost});
  b.add({seed[2], seed[1], detail::kGhost});
  b.add({seed[0], seed[2], detail::kGhost});
  for (int k = 2; k < n; ++k) {
    if (k == c) continue;
    b.insert(k);
  }

  std::vector<Face> faces;
  for (std::size_t k = 0; k < b.tris.size(); ++k) {
    if (b.alive[k] && b.tris[k][2] != detail::kGhost) faces.push_back(b.tris[k]);
  }

  // Cocircular ties: flip shared edges so the diagonal touches the lowest
  // index of the quad. Each flip strictly lowers the smaller endpoint of the
  // replaced edge, so this terminates.
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<std::pair<int, int>, std::pair<std::size_t, int>> owner;  // directed edge -> (face, slot)
    for (std::size_t f = 0; f < faces.size(); ++f) {
      for (int e = 0; e < 3; ++e) owner[{faces[f][static_cast<std::size_t>(e)], faces[f][static_cast<std::size_t>((e + 1) % 3)]}] = {f, e};
    }
    for (const auto& [edge, where] : owner) {
      auto other = owner.find({edge.second, edge.first});
      if (other == owner.end() || edge.first > edge.second) continue;
      const Face& t1 = faces[where.first];
      const Face& t2 = faces[other->second.first];
      const int ea = edge.first, eb = edge.second;
      const int cc = t1[static_cast<std::size_t>((where.second + 2) % 3)];
      const int dd = t2[static_cast<std::size_t>((other->second.second + 2) % 3)];
      const __int128 ic = incircle(b.pts[static_cast<std::size_t>(t1[0])], b.pts[static_cast<std::size_t>(t1[1])],
                                   b.pts[static_cast<std::size_t>(t1[2])], b.pts[static_cast<std::size_t>(dd)]);
      if (ic != 0) continue;
      const int lowest = std::min({ea, eb, cc, dd});
      if (lowest == ea || lowest == eb) continue;
      const std::size_t f1 = where.first, f2 = other->second.first;
      faces[f1] = {ea, dd, cc};
      faces[f2] = {dd, eb, cc};
      changed = true;
      break;
    }
  }
  std::sort(faces.begin(), faces.end(), [](const Face& x, const Face& y) {
    Face xs = x, ys = y;
    std::rotate(xs.begin(), std::min_element(xs.begin(), xs.end()), xs.end());
    std::rotate(ys.begin(), std::min_element(ys.begin(), ys.end()), ys.end());
    return xs < ys;
  });
  for (Face& f : faces) std::rotate(f.begin(), std::min_element(f.begin(), f.end()), f.end());
  return faces;
}

}  // namespace toon3d::delaunay
