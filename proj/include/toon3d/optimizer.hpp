#pragma once

// Joint camera / deformation alignment: parameter packing, the templated
// objective, Adam, and the two-stage schedule.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "toon3d/ad.hpp"
#include "toon3d/camera.hpp"
#include "toon3d/error.hpp"
#include "toon3d/mesh.hpp"
#include "toon3d/scene.hpp"

namespace toon3d {

enum class Stage { CameraOnly, Deformation };
enum class DataTerm { L3D, L2D };

enum class Group : int { Rotation = 0, Translation, Intrinsics, ScaleShift, Vertices, Points, Count };

struct OptimizerConfig {
  double lr_rotation = 1.5e-3;
  double lr_translation = 3e-3;
  double lr_intrinsics = 1.5e-3;
  double lr_scale_shift = 3e-4;
  double lr_vertices = 5e-5;
  double lr_points = 3e-3;  // traditional BA world points
  double beta1 = 0.95;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int camera_iterations = 2000;
  int deform_iterations = 2000;
  std::uint64_t seed = 0;
  double jitter_degrees = 2.0;
  DataTerm data_term = DataTerm::L3D;
  bool deformation = true;  // false: camera-only baseline
  // Traditional BA converges slowly along the rotation/focal valley, so it gets
  // its own budget and a multiplier on the camera learning rates.
  int ba_iterations = 12000;
  double ba_camera_lr_scale = 3.0;

  double lr(Group g) const {
    switch (g) {
      case Group::Rotation: return lr_rotation;
      case Group::Translation: return lr_translation;
      case Group::Intrinsics: return lr_intrinsics;
      case Group::ScaleShift: return lr_scale_shift;
      case Group::Vertices: return lr_vertices;
      case Group::Points: return lr_points;
      default: return 0.0;
    }
  }

  bool valid() const {
    return lr_rotation > 0 && lr_translation > 0 && lr_intrinsics > 0 && lr_scale_shift > 0 && lr_vertices > 0 &&
           lr_points > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0 &&
           camera_iterations >= 0 && deform_iterations >= 0 && ba_iterations >= 0 &&
           ba_camera_lr_scale > 0;
  }
};

struct AlignmentState {
  std::vector<CameraParams> cams;
  std::vector<DeformableMesh> meshes;
  LossWeights weights;
  Stage stage = Stage::CameraOnly;
};

using LossTrace = std::vector<LossBreakdown>;

// Deterministic uniform double in [0, 1) from a 64-bit engine (independent of
// the standard library's distribution implementations).
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// --- parameter layout --------------------------------------------------------

struct ParameterLayout {
  std::vector<Group> group;
  std::vector<std::size_t> quaternions;  // offsets of 4-blocks renormalized after each step
  std::vector<std::size_t> positive;     // offsets clamped to stay > 0 (focal lengths)
  std::vector<char> frozen;              // per group

  std::size_t size() const { return group.size(); }
  bool is_frozen(Group g) const { return frozen[static_cast<std::size_t>(g)] != 0; }
};

inline constexpr std::size_t kCameraBlock = 11;  // q(4) t(3) fx fy s eta

// Inputs the objective needs besides the packed parameters.
struct AlignmentProblem {
  const Scene* scene = nullptr;
  std::vector<std::vector<int>> vertex_of;  // [image][correspondence] -> mesh vertex or -1
  std::vector<const MeshTopology*> topology;
  std::vector<std::vector<double>> z0;
  std::vector<std::vector<std::array<Vec2d, 3>>> rest_faces;  // in mesh units
  std::vector<std::size_t> vertex_offset;                     // start of image's vertex block
  std::vector<double> unit;                                   // pixels per mesh unit
  std::vector<double> cx, cy;
  std::size_t n_params = 0;
};

inline AlignmentProblem make_problem(const Scene& scene, const AlignmentState& state) {
  AlignmentProblem p;
  p.scene = &scene;
  const int n = scene.n_images();
  std::size_t offset = kCameraBlock * static_cast<std::size_t>(n);
  for (int i = 0; i < n; ++i) {
    const DeformableMesh& mesh = state.meshes[static_cast<std::size_t>(i)];
    const MeshTopology& topo = mesh.topology;
    p.topology.push_back(&topo);
    p.z0.push_back(mesh.z0);
    p.unit.push_back(topo.unit);
    p.cx.push_back(state.cams[static_cast<std::size_t>(i)].cx);
    p.cy.push_back(state.cams[static_cast<std::size_t>(i)].cy);
    std::vector<std::array<Vec2d, 3>> rest;
    for (const Face& f : topo.faces) rest.push_back(face_points(topo.vertices0, f, topo.unit));
    p.rest_faces.push_back(std::move(rest));
    p.vertex_offset.push_back(offset);
    offset += 3 * mesh.size();
    // Correspondence -> vertex via the stored source indices.
    std::vector<int> vmap(static_cast<std::size_t>(scene.correspondences.n_points()), -1);
    std::vector<int> visible_list;
    for (int c = 0; c < scene.correspondences.n_points(); ++c) {
      if (scene.correspondences.visible(i, c)) visible_list.push_back(c);
    }
    for (std::size_t k = 0; k < topo.input_to_vertex.size() && k < visible_list.size(); ++k) {
      vmap[static_cast<std::size_t>(visible_list[k])] = topo.input_to_vertex[k];
    }
    p.vertex_of.push_back(std::move(vmap));
  }
  p.n_params = offset;
  return p;
}

inline ParameterLayout alignment_layout(const AlignmentProblem& p, Stage stage) {
  ParameterLayout layout;
  layout.group.resize(p.n_params, Group::Vertices);
  const std::size_t n = p.topology.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = kCameraBlock * i;
    for (std::size_t k = 0; k < 4; ++k) layout.group[o + k] = Group::Rotation;
    for (std::size_t k = 4; k < 7; ++k) layout.group[o + k] = Group::Translation;
    layout.group[o + 7] = layout.group[o + 8] = Group::Intrinsics;
    layout.group[o + 9] = layout.group[o + 10] = Group::ScaleShift;
    layout.quaternions.push_back(o);
    layout.positive.push_back(o + 7);
    layout.positive.push_back(o + 8);
  }
  layout.frozen.assign(static_cast<std::size_t>(Group::Count), 0);
  if (stage == Stage::CameraOnly) layout.frozen[static_cast<std::size_t>(Group::Vertices)] = 1;
  return layout;
}

inline std::vector<double> pack(const AlignmentProblem& p, const AlignmentState& state) {
  std::vector<double> x(p.n_params, 0.0);
  for (std::size_t i = 0; i < state.cams.size(); ++i) {
    const CameraParams& c = state.cams[i];
    const std::size_t o = kCameraBlock * i;
    for (std::size_t k = 0; k < 4; ++k) x[o + k] = c.rotation[k];
    x[o + 4] = c.translation.x;
    x[o + 5] = c.translation.y;
    x[o + 6] = c.translation.z;
    x[o + 7] = c.fx;
    x[o + 8] = c.fy;
    x[o + 9] = c.scale;
    x[o + 10] = c.shift;
    const auto& mesh = state.meshes[i];
    for (std::size_t v = 0; v < mesh.size(); ++v) {
      x[p.vertex_offset[i] + 3 * v + 0] = mesh.positions[v].x / p.unit[i];
      x[p.vertex_offset[i] + 3 * v + 1] = mesh.positions[v].y / p.unit[i];
      x[p.vertex_offset[i] + 3 * v + 2] = mesh.positions[v].z;
    }
  }
  return x;
}

inline void unpack(const AlignmentProblem& p, std::span<const double> x, AlignmentState& state) {
  for (std::size_t i = 0; i < state.cams.size(); ++i) {
    CameraParams& c = state.cams[i];
    const std::size_t o = kCameraBlock * i;
    for (std::size_t k = 0; k < 4; ++k) c.rotation[k] = x[o + k];
    c.translation = {x[o + 4], x[o + 5], x[o + 6]};
    c.fx = x[o + 7];
    c.fy = x[o + 8];
    c.scale = x[o + 9];
    c.shift = x[o + 10];
    auto& mesh = state.meshes[i];
    for (std::size_t v = 0; v < mesh.size(); ++v) {
      mesh.positions[v] = {x[p.vertex_offset[i] + 3 * v + 0] * p.unit[i], x[p.vertex_offset[i] + 3 * v + 1] * p.unit[i],
                           x[p.vertex_offset[i] + 3 * v + 2]};
    }
  }
}

// --- objective -----------------------------------------------------------------

template <class T>
struct AlignmentTerms {
  T data{}, scale{}, aspect{}, focal{}, neg{}, arap2d{}, flip{}, z{};
};

// Which terms enter the total and with what weight. `data_weight` scales the
// correspondence term (L3D or L2D).
struct ObjectiveSpec {
  LossWeights weights;
  double data_weight = 1.0;
  DataTerm data_term = DataTerm::L3D;
  bool deformation = false;
};

template <class T>
Camera<T> camera_from(std::span<const T> x, std::size_t i, double cx, double cy) {
  const std::size_t o = kCameraBlock * i;
  Camera<T> c;
  c.rotation = {x[o], x[o + 1], x[o + 2], x[o + 3]};
  c.translation = {x[o + 4], x[o + 5], x[o + 6]};
  c.fx = x[o + 7];
  c.fy = x[o + 8];
  c.cx = T(cx);
  c.cy = T(cy);
  c.scale = x[o + 9];
  c.shift = x[o + 10];
  return c;
}

// Mean over ordered visible pairs (i -> j) of the squared distance between
// the projection into j of i's backprojected point and j's observation,
// measured in pixels / pixel_unit[j].
template <class T>
T loss_2d_term(const std::vector<std::vector<Vec3<T>>>& points, const std::vector<std::vector<Vec2<T>>>& observed_px,
               const std::vector<Camera<T>>& cams, const std::vector<Mat3<T>>& rot, const Scene& scene,
               const std::vector<double>& pixel_unit) {
  const CorrespondenceSet& corrs = scene.correspondences;
  T sum(0);
  long count = 0;
  for (int c = 0; c < corrs.n_points(); ++c) {
    for (int i = 0; i < corrs.n_images(); ++i) {
      if (!corrs.visible(i, c)) continue;
      for (int j = 0; j < corrs.n_images(); ++j) {
        if (j == i || !corrs.visible(j, c)) continue;
        const auto ju = static_cast<std::size_t>(j);
        const ImageRecord& rec = scene.images[ju];
        const Vec3<T> local = to_camera(points[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)], cams[ju], rot[ju]);
        const T z = local.z > T(1e-6) ? local.z : T(1e-6);
        const T u = (cams[ju].fx * local.x / z + cams[ju].cx) * T(static_cast<double>(rec.width));
        const T v = (cams[ju].fy * local.y / z + cams[ju].cy) * T(static_cast<double>(rec.height));
        const Vec2<T>& obs = observed_px[ju][static_cast<std::size_t>(c)];
        const T k(1.0 / pixel_unit[ju]);
        const T du = (u - obs.x) * k, dv = (v - obs.y) * k;
        sum += du * du + dv * dv;
        ++count;
      }
    }
  }
  return count == 0 ? T(0) : sum / T(static_cast<double>(count));
}

template <class T>
AlignmentTerms<T> alignment_terms(const AlignmentProblem& p, std::span<const T> x, const ObjectiveSpec& spec) {
  const Scene& scene = *p.scene;
  const CorrespondenceSet& corrs = scene.correspondences;
  const std::size_t n = p.topology.size();
  std::vector<Camera<T>> cams;
  std::vector<Mat3<T>> rot;
  for (std::size_t i = 0; i < n; ++i) {
    cams.push_back(camera_from(x, i, p.cx[i], p.cy[i]));
    rot.push_back(rotation_from_quaternion(cams.back().rotation));
  }
  AlignmentTerms<T> t;

  if (spec.data_weight != 0.0) {
    std::vector<std::vector<Vec3<T>>> pts(n, std::vector<Vec3<T>>(static_cast<std::size_t>(corrs.n_points())));
    std::vector<std::vector<Vec2<T>>> obs(n, std::vector<Vec2<T>>(static_cast<std::size_t>(corrs.n_points())));
    for (std::size_t i = 0; i < n; ++i) {
      const ImageRecord& rec = scene.images[i];
      const T su(p.unit[i] / rec.width), sv(p.unit[i] / rec.height);
      for (int c = 0; c < corrs.n_points(); ++c) {
        const int v = p.vertex_of[i][static_cast<std::size_t>(c)];
        if (v < 0) continue;
        const std::size_t o = p.vertex_offset[i] + 3 * static_cast<std::size_t>(v);
        const Vec2<T> uv{x[o] * su, x[o + 1] * sv};
        pts[i][static_cast<std::size_t>(c)] = backproject(uv, x[o + 2], cams[i], rot[i]);
        obs[i][static_cast<std::size_t>(c)] = {x[o] * T(p.unit[i]), x[o + 1] * T(p.unit[i])};
      }
    }
    t.data = spec.data_term == DataTerm::L3D ? loss_3d_term(pts, corrs)
                                             : loss_2d_term(pts, obs, cams, rot, scene, p.unit);
  }

  std::vector<std::array<int, 2>> dims;
  for (const auto& rec : scene.images) dims.push_back({rec.width, rec.height});
  const auto reg = camera_regularizer_terms(cams, dims);
  t.scale = reg.scale;
  t.aspect = reg.aspect;
  t.focal = reg.focal;
  t.neg = reg.neg_scale + reg.neg_shift;

  if (spec.deformation) {
    T arap(0), flip(0), zdev(0);
    for (std::size_t i = 0; i < n; ++i) {
      const MeshTopology& topo = *p.topology[i];
      const std::size_t base = p.vertex_offset[i];
      auto vert = [&](int v) {
        const std::size_t o = base + 3 * static_cast<std::size_t>(v);
        return Vec2<T>{x[o], x[o + 1]};
      };
      if (!topo.faces.empty()) {
        T fa(0), ff(0);
        for (std::size_t f = 0; f < topo.faces.size(); ++f) {
          const Face& face = topo.faces[f];
          const std::array<Vec2<T>, 3> cur{vert(face[0]), vert(face[1]), vert(face[2])};
          const auto& r = p.rest_faces[i][f];
          const std::array<Vec2<T>, 3> rest{Vec2<T>{T(r[0].x), T(r[0].y)}, Vec2<T>{T(r[1].x), T(r[1].y)},
                                            Vec2<T>{T(r[2].x), T(r[2].y)}};
          fa += arap_face_residual(rest, cur);
          ff += flip_face_penalty(cur, topo.areas0[f]);
        }
        const T nf(static_cast<double>(topo.faces.size()));
        arap += fa / nf;
        flip += ff / nf;
      }
      const std::size_t nv = p.z0[i].size();
      if (nv > 0) {
        T zs(0);
        for (std::size_t v = 0; v < nv; ++v) zs += ad::abs_of(x[base + 3 * v + 2] - T(p.z0[i][v]));
        zdev += zs / T(static_cast<double>(nv));
      }
    }
    const T nn(static_cast<double>(n));
    t.arap2d = arap / nn;
    t.flip = flip / nn;
    t.z = zdev / nn;
  }
  return t;
}

template <class T>
T combine(const AlignmentTerms<T>& t, const ObjectiveSpec& spec) {
  const LossWeights& w = spec.weights;
  T total = T(spec.data_weight) * t.data + T(w.scale) * t.scale + T(w.aspect) * t.aspect + T(w.focal) * t.focal +
            T(w.neg) * t.neg;
  if (spec.deformation) total += T(w.arap2d) * t.arap2d + T(w.flip) * t.flip + T(w.z) * t.z;
  return total;
}

template <class T>
LossBreakdown breakdown_of(const AlignmentTerms<T>& t, const ObjectiveSpec& spec, double total) {
  LossBreakdown b;
  b.terms[spec.data_term == DataTerm::L3D ? "l3d" : "l2d"] = ad::value_of(t.data);
  b.terms["scale"] = ad::value_of(t.scale);
  b.terms["aspect"] = ad::value_of(t.aspect);
  b.terms["focal"] = ad::value_of(t.focal);
  b.terms["neg"] = ad::value_of(t.neg);
  if (spec.deformation) {
    b.terms["arap2d"] = ad::value_of(t.arap2d);
    b.terms["flip"] = ad::value_of(t.flip);
    b.terms["z"] = ad::value_of(t.z);
  }
  b.total = total;
  return b;
}

inline void check_finite(const LossBreakdown& b) {
  for (const auto& [name, value] : b.terms) {
    if (!std::isfinite(value)) throw EvaluationError("optimizer", "loss term '" + name + "' is not finite");
  }
  if (!std::isfinite(b.total)) throw EvaluationError("optimizer", "total loss is not finite");
}

// A differentiable objective over a packed parameter vector.
class Objective {
 public:
  using Evaluator = std::function<ad::Var(std::span<const ad::Var>, LossBreakdown*)>;
  using LongEvaluator = std::function<long double(std::span<const long double>)>;

  Objective(Evaluator eval, LongEvaluator eval_long, ParameterLayout layout)
      : eval_(std::move(eval)), eval_long_(std::move(eval_long)), layout_(std::move(layout)) {}

  const ParameterLayout& layout() const { return layout_; }

  double value_and_gradient(std::span<const double> x, std::span<double> grad, LossBreakdown* breakdown = nullptr) const {
    const double v = ad::value_and_gradient([&](std::span<const ad::Var> vars) { return eval_(vars, breakdown); }, x,
                                            grad);
    if (breakdown != nullptr) check_finite(*breakdown);
    if (!std::isfinite(v)) throw EvaluationError("optimizer", "objective is not finite");
    return v;
  }

  std::vector<double> gradient(std::span<const double> x) const {
    std::vector<double> g(x.size());
    LossBreakdown b;
    value_and_gradient(x, g, &b);
    return g;
  }

  // Extended-precision evaluation on the same formulas; used by
  // finite-difference checks.
  long double value_long(std::span<const long double> x) const { return eval_long_(x); }

 private:
  Evaluator eval_;
  LongEvaluator eval_long_;
  ParameterLayout layout_;
};

inline Objective alignment_objective(const AlignmentProblem& problem, const ObjectiveSpec& spec, Stage stage) {
  auto eval = [problem, spec](std::span<const ad::Var> x, LossBreakdown* b) {
    const auto t = alignment_terms<ad::Var>(problem, x, spec);
    const ad::Var total = combine(t, spec);
    if (b != nullptr) *b = breakdown_of(t, spec, total.value());
    return total;
  };
  auto eval_long = [problem, spec](std::span<const long double> x) {
    return combine(alignment_terms<long double>(problem, x, spec), spec);
  };
  return Objective(eval, eval_long, alignment_layout(problem, stage));
}

// --- Adam ------------------------------------------------------------------------

struct AdamMoments {
  std::vector<double> m, v;
  explicit AdamMoments(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update (t >= 1). Frozen groups are left untouched;
// quaternion blocks are renormalized and focal lengths kept positive.
inline void adam_step(std::vector<double>& params, std::span<const double> grads, AdamMoments& moments, int t,
                      const OptimizerConfig& config, const ParameterLayout& layout) {
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Group g = layout.group[k];
    if (layout.is_frozen(g)) continue;
    moments.m[k] = b1 * moments.m[k] + (1.0 - b1) * grads[k];
    moments.v[k] = b2 * moments.v[k] + (1.0 - b2) * grads[k] * grads[k];
    const double mhat = moments.m[k] / c1;
    const double vhat = moments.v[k] / c2;
    params[k] -= config.lr(g) * mhat / (std::sqrt(vhat) + config.epsilon);
  }
  for (std::size_t o : layout.quaternions) {
    const double n = std::sqrt(params[o] * params[o] + params[o + 1] * params[o + 1] + params[o + 2] * params[o + 2] +
                               params[o + 3] * params[o + 3]);
    for (std::size_t k = 0; k < 4; ++k) params[o + k] /= n;
  }
  for (std::size_t o : layout.positive) params[o] = std::max(params[o], 1e-3);
}

// Runs `iterations` Adam steps on `x`. Returns the per-iteration breakdown,
// recorded before each step.
// `after_step` may move x along directions the objective cannot see.
inline LossTrace minimize(const Objective& objective, std::vector<double>& x, int iterations,
                          const OptimizerConfig& config,
                          const std::function<void(std::vector<double>&)>& after_step = {}) {
  LossTrace trace;
  trace.reserve(static_cast<std::size_t>(std::max(iterations, 0)));
  AdamMoments moments(x.size());
  std::vector<double> grad(x.size());
  double initial = 0.0;
  for (int it = 1; it <= iterations; ++it) {
    LossBreakdown b;
    objective.value_and_gradient(x, grad, &b);
    if (it == 1) initial = b.total;
    if (b.total > 1e6 * std::max(initial, 1e-300)) {
      throw DivergenceError("loss diverged at iteration " + std::to_string(it) + ": " + std::to_string(b.total) +
                            " vs initial " + std::to_string(initial));
    }
    trace.push_back(std::move(b));
    adam_step(x, grad, moments, it, config, objective.layout());
    if (after_step) after_step(x);
  }
  return trace;
}

// Rolling camera i about its optical axis by a while rotating its mesh by -a
// about the principal point leaves every backprojected point unchanged (exactly
// so for square pixels) and is invisible to ARAP. Adam drifts along that valley
// and the drift shows up as camera roll error, so after each deformation step
// the mesh's net rotation is handed to the camera.
inline void transfer_mesh_roll(const AlignmentProblem& p, std::vector<double>& x) {
  for (std::size_t i = 0; i < p.topology.size(); ++i) {
    const ImageRecord& rec = p.scene->images[i];
    const double unit = p.unit[i];
    const Vec2d centre{p.cx[i] * rec.width / unit, p.cy[i] * rec.height / unit};
    const std::vector<Vec2d>& rest = p.topology[i]->vertices0;
    const std::size_t base = p.vertex_offset[i];
    double cross = 0.0, dot = 0.0;
    for (std::size_t v = 0; v < rest.size(); ++v) {
      const Vec2d r0 = (1.0 / unit) * rest[v] - centre;
      const Vec2d r{x[base + 3 * v] - centre.x, x[base + 3 * v + 1] - centre.y};
      cross += r0.x * r.y - r0.y * r.x;
      dot += r0.x * r.x + r0.y * r.y;
    }
    const double a = std::atan2(cross, dot);
    if (a == 0.0) continue;
    const double c = std::cos(a), s = std::sin(a);
    for (std::size_t v = 0; v < rest.size(); ++v) {
      const double rx = x[base + 3 * v] - centre.x, ry = x[base + 3 * v + 1] - centre.y;
      x[base + 3 * v] = centre.x + c * rx + s * ry;
      x[base + 3 * v + 1] = centre.y - s * rx + c * ry;
    }
    const std::size_t o = kCameraBlock * i;
    const std::array<double, 4> q{x[o], x[o + 1], x[o + 2], x[o + 3]};
    const auto rolled = quaternion_multiply(q, std::array<double, 4>{std::cos(0.5 * a), 0.0, 0.0, std::sin(0.5 * a)});
    for (std::size_t k = 0; k < 4; ++k) x[o + k] = rolled[k];
  }
}

// --- schedule --------------------------------------------------------------------------

inline ObjectiveSpec stage_spec(const AlignmentState& state, Stage stage, const OptimizerConfig& config) {
  ObjectiveSpec spec;
  spec.weights = state.weights;
  spec.data_term = config.data_term;
  spec.deformation = stage == Stage::Deformation;
  return spec;
}

inline std::pair<AlignmentState, LossTrace> run_stage(const Scene& scene, AlignmentState state, Stage stage,
                                                       const OptimizerConfig& config) {
  state.stage = stage;
  const int iterations = stage == Stage::CameraOnly ? config.camera_iterations : config.deform_iterations;
  if (iterations <= 0) return {std::move(state), {}};
  const AlignmentProblem problem = make_problem(scene, state);
  const Objective objective = alignment_objective(problem, stage_spec(state, stage, config), stage);
  std::vector<double> x = pack(problem, state);
  std::function<void(std::vector<double>&)> gauge;
  if (stage == Stage::Deformation) gauge = [&problem](std::vector<double>& v) { transfer_mesh_roll(problem, v); };
  LossTrace trace = minimize(objective, x, iterations, config, gauge);
  unpack(problem, x, state);
  return {std::move(state), std::move(trace)};
}

// Identity rotations (image 0 exactly, others jittered by at most
// config.jitter_degrees about a random axis), zero translation, square-pixel
// focal equal to the larger image side, s = 1, eta = 0, meshes at rest.
inline AlignmentState initial_state(const Scene& scene, const OptimizerConfig& config, const LossWeights& weights) {
  AlignmentState state;
  state.weights = weights;
  std::mt19937_64 rng(config.seed);
  for (int i = 0; i < scene.n_images(); ++i) {
    CameraParams cam = default_camera(scene.images[static_cast<std::size_t>(i)]);
    const double ax = uniform01(rng) - 0.5, ay = uniform01(rng) - 0.5, az = uniform01(rng) - 0.5;
    const double angle = uniform01(rng) * config.jitter_degrees * std::numbers::pi / 180.0;
    if (i > 0) cam.rotation = quaternion_from_axis_angle({ax, ay, az}, angle);
    state.cams.push_back(cam);
    state.meshes.push_back(build_mesh(scene, i));
  }
  return state;
}

struct AlignmentResult {
  AlignmentState state;
  LossTrace camera_trace;
  LossTrace deform_trace;
};

// Camera stage followed by the deformation stage. A single-image scene has
// no pairs to align and is returned at its initial state.
inline AlignmentResult align(const Scene& scene, const OptimizerConfig& config, const LossWeights& weights = {}) {
  if (!config.valid()) throw Error("optimizer", "invalid optimizer configuration");
  if (!weights.valid()) throw Error("optimizer", "loss weights must be non-negative");
  AlignmentResult result;
  result.state = initial_state(scene, config, weights);
  if (scene.n_images() < 2) return result;
  auto [cam_state, cam_trace] = run_stage(scene, std::move(result.state), Stage::CameraOnly, config);
  result.camera_trace = std::move(cam_trace);
  if (config.deformation) {
    auto [def_state, def_trace] = run_stage(scene, std::move(cam_state), Stage::Deformation, config);
    result.state = std::move(def_state);
    result.deform_trace = std::move(def_trace);
  } else {
    result.state = std::move(cam_state);
  }
  return result;
}

}  // namespace toon3d
