#include <gtest/gtest.h>

#include <algorithm>

#include "support.hpp"

namespace toon3d {
namespace {

ParameterLayout flat_layout(std::size_t n, Group g = Group::Translation) {
  ParameterLayout layout;
  layout.group.assign(n, g);
  layout.frozen.assign(static_cast<std::size_t>(Group::Count), 0);
  return layout;
}

Objective quadratic(std::size_t n, double scale = 1.0) {
  auto eval = [scale](std::span<const ad::Var> x, LossBreakdown* b) {
    ad::Var s(0.0);
    for (const auto& v : x) s += v * v;
    s = s * ad::Var(scale);
    if (b != nullptr) b->total = s.value();
    return s;
  };
  auto eval_long = [scale](std::span<const long double> x) {
    long double s = 0;
    for (auto v : x) s += v * v;
    return s * scale;
  };
  return Objective(eval, eval_long, flat_layout(n));
}

TEST(Adam, ReferenceFirstStep) {
  OptimizerConfig cfg;
  cfg.lr_translation = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  AdamMoments m(1);
  adam_step(p, g, m, 1, cfg, flat_layout(1));
  // m_hat = 1 and v_hat = 1, so the step is exactly -lr / (1 + eps).
  EXPECT_NEAR(p[0], -0.1 / (1.0 + 1e-8), 1e-17);
  EXPECT_NEAR(p[0], -0.0999999999, 1e-9);
  EXPECT_DOUBLE_EQ(m.m[0], 0.1);
  EXPECT_NEAR(m.v[0], 0.001, 1e-18);
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
  OptimizerConfig cfg;
  cfg.beta1 = 0.9;
  std::vector<double> p{0.5, -2.0};
  AdamMoments m(2);
  m.m = {0.2, -0.4};
  m.v = {0.01, 0.04};
  const std::vector<double> g{0.0, 0.0};
  const auto before = p;
  adam_step(p, g, m, 3, cfg, flat_layout(2));
  // The bias-corrected first moment is non-zero, so params move; with no
  // history they stay put.
  std::vector<double> q{0.5, -2.0};
  AdamMoments fresh(2);
  adam_step(q, g, fresh, 1, cfg, flat_layout(2));
  EXPECT_EQ(q, before);
  EXPECT_DOUBLE_EQ(m.m[0], 0.9 * 0.2);
  EXPECT_DOUBLE_EQ(m.v[1], 0.999 * 0.04);
}

TEST(Adam, IdenticalCallsAreBitwiseReproducible) {
  OptimizerConfig cfg;
  const std::vector<double> g{0.3, -1.7, 2e-9};
  std::vector<double> a{1.0, 2.0, 3.0}, b = a;
  AdamMoments ma(3), mb(3);
  for (int t = 1; t <= 5; ++t) {
    adam_step(a, g, ma, t, cfg, flat_layout(3));
    adam_step(b, g, mb, t, cfg, flat_layout(3));
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(ma.m, mb.m);
  EXPECT_EQ(ma.v, mb.v);
}

TEST(Adam, FrozenGroupsQuaternionsAndFocalClamp) {
  OptimizerConfig cfg;
  cfg.lr_rotation = 0.5;
  cfg.lr_intrinsics = 10.0;
  ParameterLayout layout = flat_layout(6, Group::Rotation);
  layout.group[4] = Group::Intrinsics;
  layout.group[5] = Group::Vertices;
  layout.frozen[static_cast<std::size_t>(Group::Vertices)] = 1;
  layout.quaternions = {0};
  layout.positive = {4};
  std::vector<double> p{1, 0, 0, 0, 0.5, 7.0};
  AdamMoments m(6);
  adam_step(p, std::vector<double>{0.1, -0.2, 0.3, 0.4, 1.0, 1.0}, m, 1, cfg, layout);
  EXPECT_NEAR(p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3], 1.0, 1e-15);
  EXPECT_EQ(p[4], 1e-3);
  EXPECT_EQ(p[5], 7.0);
}

TEST(Minimize, DivergenceAndNonFiniteAreReported) {
  OptimizerConfig cfg;
  cfg.lr_translation = 1e4;
  std::vector<double> x{1.0};
  EXPECT_THROW(minimize(quadratic(1), x, 5, cfg), DivergenceError);
  std::vector<double> y{1.0};
  EXPECT_THROW(minimize(quadratic(1, std::nan("")), y, 1, cfg), EvaluationError);
}

TEST(Minimize, TraceRecordsLossBeforeEachStep) {
  OptimizerConfig cfg;
  std::vector<double> x{1.0, -1.0};
  const auto trace = minimize(quadratic(2), x, 10, cfg);
  ASSERT_EQ(trace.size(), 10u);
  EXPECT_EQ(trace.front().total, 2.0);
  EXPECT_LT(trace.back().total, 2.0);
}

// Consistent three-view oracle scene at the default image size.
Scene three_view(std::uint64_t seed, double noise = 0.0) {
  synth::SyntheticSpec spec;
  spec.seed = seed;
  spec.n_cameras = 3;
  spec.depth_noise = noise;
  return normalize_depths(synth::generate_scene(spec).first);
}

TEST(RunStage, ZeroIterationsIsNoOp) {
  const Scene scene = three_view(0);
  OptimizerConfig cfg;
  cfg.camera_iterations = 0;
  const AlignmentState init = initial_state(scene, cfg, LossWeights{});
  const auto [out, trace] = run_stage(scene, init, Stage::CameraOnly, cfg);
  EXPECT_TRUE(trace.empty());
  EXPECT_EQ(cameras_to_json(scene, out.cams), cameras_to_json(scene, init.cams));
}

std::vector<double> sliding_median(const LossTrace& trace, std::size_t window) {
  std::vector<double> out;
  for (std::size_t k = 0; k + window <= trace.size(); ++k) {
    std::vector<double> w;
    for (std::size_t j = k; j < k + window; ++j) w.push_back(trace[j].total);
    std::nth_element(w.begin(), w.begin() + window / 2, w.end());
    out.push_back(w[window / 2]);
  }
  return out;
}

class ConsistentScene : public ::testing::TestWithParam<int> {};

TEST_P(ConsistentScene, CameraStageReducesL3dThousandfold) {
  const Scene scene = three_view(static_cast<std::uint64_t>(GetParam()));
  OptimizerConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(GetParam());
  const AlignmentState init = initial_state(scene, cfg, LossWeights{});
  const auto depths = sampled_correspondence_depths(scene);
  const double before = loss_3d(scene, init.cams, depths);
  const auto [out, trace] = run_stage(scene, init, Stage::CameraOnly, cfg);
  const double after = loss_3d(scene, out.cams, depths);
  EXPECT_LE(after, 1e-3 * before) << "before " << before << " after " << after;
  for (const auto& cam : out.cams) EXPECT_TRUE(is_valid(cam));
  // Vertices are frozen in this stage.
  for (std::size_t i = 0; i < out.meshes.size(); ++i) {
    for (std::size_t k = 0; k < out.meshes[i].positions.size(); ++k) {
      EXPECT_EQ(out.meshes[i].positions[k].x, init.meshes[i].positions[k].x);
      EXPECT_EQ(out.meshes[i].positions[k].z, init.meshes[i].positions[k].z);
    }
  }
}

TEST_P(ConsistentScene, SlidingMedianNeverIncreases) {
  const Scene scene = three_view(static_cast<std::uint64_t>(GetParam()), 0.01);
  OptimizerConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(GetParam());
  const auto result = align(scene, cfg);
  for (const LossTrace* trace : {&result.camera_trace, &result.deform_trace}) {
    const auto med = sliding_median(*trace, 50);
    ASSERT_FALSE(med.empty());
    for (std::size_t k = 1; k < med.size(); ++k) {
      ASSERT_LE(med[k], med[k - 1]) << "window " << k << " of " << med.size();
    }
  }
}

TEST_P(ConsistentScene, DeformationStartsWhereCameraStageEnded) {
  const Scene scene = three_view(static_cast<std::uint64_t>(GetParam()), 0.01);
  OptimizerConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(GetParam());
  const auto result = align(scene, cfg);
  const LossWeights w;
  auto j_camera = [&w](const LossBreakdown& b) {
    return b["l3d"] + w.scale * b["scale"] + w.aspect * b["aspect"] + w.focal * b["focal"] + w.neg * b["neg"];
  };
  const double last = j_camera(result.camera_trace.back());
  const double first = j_camera(result.deform_trace.front());
  EXPECT_LE(first, 1.1 * last) << "camera stage ended at " << last;
}

INSTANTIATE_TEST_SUITE_P(Seeds, ConsistentScene, ::testing::Range(0, 3));

TEST(Align, SingleImageIsIdentity) {
  Scene scene = three_view(1);
  scene.images.resize(1);
  CorrespondenceSet one(1, 0);
  scene.correspondences = one;
  const auto result = align(scene, OptimizerConfig{});
  ASSERT_EQ(result.state.cams.size(), 1u);
  const auto& cam = result.state.cams[0];
  EXPECT_EQ(cam.rotation, (std::array<double, 4>{1, 0, 0, 0}));
  EXPECT_EQ(cam.translation.x, 0.0);
  EXPECT_TRUE(result.camera_trace.empty());
  EXPECT_TRUE(result.deform_trace.empty());
  EXPECT_EQ(loss_3d(scene, result.state.cams, sampled_correspondence_depths(scene)), 0.0);
}

TEST(Align, SameSeedGivesIdenticalCameras) {
  const Scene scene = three_view(2);
  OptimizerConfig cfg;
  cfg.camera_iterations = 300;
  cfg.deform_iterations = 300;
  cfg.seed = 11;
  const auto a = align(scene, cfg), b = align(scene, cfg);
  EXPECT_EQ(cameras_to_json(scene, a.state.cams).dump(), cameras_to_json(scene, b.state.cams).dump());
  cfg.seed = 12;
  const auto c = align(scene, cfg);
  EXPECT_NE(cameras_to_json(scene, a.state.cams).dump(), cameras_to_json(scene, c.state.cams).dump());
}

TEST(Align, InitialStateJittersAllButFirstCamera) {
  const Scene scene = three_view(0);
  OptimizerConfig cfg;
  const auto state = initial_state(scene, cfg, LossWeights{});
  EXPECT_EQ(state.cams[0].rotation, (std::array<double, 4>{1, 0, 0, 0}));
  for (std::size_t i = 1; i < state.cams.size(); ++i) {
    const double angle = 2.0 * std::acos(std::min(1.0, state.cams[i].rotation[0])) * 180.0 / std::numbers::pi;
    EXPECT_GT(angle, 0.0);
    EXPECT_LE(angle, cfg.jitter_degrees + 1e-12);
  }
}

TEST(Align, RejectsInvalidConfiguration) {
  const Scene scene = three_view(0);
  OptimizerConfig cfg;
  cfg.lr_vertices = 0.0;
  EXPECT_THROW(align(scene, cfg), Error);
  LossWeights w;
  w.flip = -1.0;
  EXPECT_THROW(align(scene, OptimizerConfig{}, w), Error);
}

TEST(Align, L2dDataTermSwapsIn) {
  const Scene scene = three_view(3);
  OptimizerConfig cfg;
  cfg.data_term = DataTerm::L2D;
  cfg.camera_iterations = 50;
  cfg.deform_iterations = 50;
  const auto result = align(scene, cfg);
  EXPECT_EQ(result.camera_trace.size(), 50u);
  EXPECT_LT(result.camera_trace.back().total, result.camera_trace.front().total);
}

}  // namespace
}  // namespace toon3d
