#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "support.hpp"

namespace toon3d {
namespace {

constexpr int kSeeds = 20;
constexpr double kTolerance = 1e-4;

struct TermCase {
  std::string name;
  ObjectiveSpec spec;
};

std::vector<TermCase> term_cases() {
  LossWeights zero{0, 0, 0, 0, 0, 0, 0};
  auto only = [&](std::string name, auto set, bool deformation, double data = 0.0, DataTerm term = DataTerm::L3D) {
    ObjectiveSpec s;
    s.weights = zero;
    set(s.weights);
    s.data_weight = data;
    s.data_term = term;
    s.deformation = deformation;
    return TermCase{std::move(name), s};
  };
  auto none = [](LossWeights&) {};
  return {
      only("l3d", none, true, 1.0, DataTerm::L3D),
      only("l2d", none, true, 1.0, DataTerm::L2D),
      only("scale", [](LossWeights& w) { w.scale = 1; }, false),
      only("aspect", [](LossWeights& w) { w.aspect = 1; }, false),
      only("focal", [](LossWeights& w) { w.focal = 1; }, false),
      only("neg", [](LossWeights& w) { w.neg = 1; }, false),
      only("arap2d", [](LossWeights& w) { w.arap2d = 1; }, true),
      only("flip", [](LossWeights& w) { w.flip = 1; }, true),
      only("z", [](LossWeights& w) { w.z = 1; }, true),
  };
}

class GradientTest : public ::testing::TestWithParam<int> {};

TEST_P(GradientTest, EveryTermMatchesFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  const Scene scene = testing::small_scene(seed);
  // Large vertex motion so some faces flip and the flip hinge is active.
  const AlignmentState state = testing::random_state(scene, seed, 12.0);
  // Reprojection needs points in front of the cameras; behind them the depth
  // clamp makes the loss huge and differences lose all precision.
  AlignmentState facing = state;
  for (auto& cam : facing.cams) {
    cam.scale = 0.5 + std::abs(cam.scale);
    cam.shift = std::abs(cam.shift);
    cam.translation = 0.2 * cam.translation;
  }
  const AlignmentProblem problem = make_problem(scene, state);
  const AlignmentProblem facing_problem = make_problem(scene, facing);
  for (const auto& tc : term_cases()) {
    const bool l2d = tc.spec.data_term == DataTerm::L2D && tc.spec.data_weight != 0.0;
    const AlignmentProblem& prob = l2d ? facing_problem : problem;
    const std::vector<double> x = pack(prob, l2d ? facing : state);
    const Objective obj = alignment_objective(prob, tc.spec, Stage::Deformation);
    const testing::FdReport r = testing::fd_compare(obj, x);
    EXPECT_LE(r.worst, kTolerance) << tc.name << " seed " << seed << " param " << r.index << " ad " << r.ad << " fd "
                                   << r.fd;
  }
}

TEST_P(GradientTest, StageObjectivesMatchFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  const Scene scene = testing::small_scene(seed);
  const AlignmentState state = testing::random_state(scene, seed);
  const AlignmentProblem problem = make_problem(scene, state);
  const std::vector<double> x = pack(problem, state);
  for (Stage stage : {Stage::CameraOnly, Stage::Deformation}) {
    const Objective obj = alignment_objective(problem, stage_spec(state, stage, OptimizerConfig{}), stage);
    const testing::FdReport r = testing::fd_compare(obj, x);
    EXPECT_LE(r.worst, kTolerance) << "stage " << static_cast<int>(stage) << " seed " << seed << " param " << r.index;
  }
}

TEST_P(GradientTest, BundleAdjustmentReprojectionMatchesFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  const Scene scene = testing::small_scene(seed);
  const AlignmentState state = testing::random_state(scene, seed);
  const BaProblem problem = make_ba_problem(scene);
  std::vector<Vec3d> points;
  std::mt19937_64 rng(seed);
  for (int c = 0; c < scene.correspondences.n_points(); ++c) {
    points.push_back({uniform01(rng) - 0.5, uniform01(rng) - 0.5, 0.8 + uniform01(rng)});
  }
  const testing::FdReport r = testing::fd_compare(ba_objective(problem), ba_pack(problem, state.cams, points));
  EXPECT_LE(r.worst, kTolerance) << "seed " << seed << " param " << r.index;
}

// The random states must exercise the hinge terms, or the checks above
// would compare zeros.
TEST(Gradient, RandomStatesActivateHinges) {
  int flip_active = 0, neg_active = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const Scene scene = testing::small_scene(static_cast<std::uint64_t>(seed));
    const AlignmentState state = testing::random_state(scene, static_cast<std::uint64_t>(seed), 12.0);
    flip_active += loss_flip(state.meshes) > 0.0 ? 1 : 0;
    neg_active += camera_regularizers(state.cams, image_dims(scene))["neg"] > 0.0 ? 1 : 0;
  }
  EXPECT_GT(flip_active, kSeeds / 2);
  EXPECT_GT(neg_active, kSeeds / 2);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientTest, ::testing::Range(0, kSeeds));

TEST(Gradient, SquareAtThree) {
  const std::vector<double> x{3.0};
  std::vector<double> g(1);
  const double v = ad::value_and_gradient([](std::span<const ad::Var> v) { return v[0] * v[0]; }, x, g);
  EXPECT_DOUBLE_EQ(v, 9.0);
  EXPECT_DOUBLE_EQ(g[0], 6.0);
}

TEST(Gradient, ScaleRegularizerByHand) {
  // L_scale = (1 - mean s)^2 at s = (2, 2): dL/ds_i = 2 (mean - 1) / N = 1.
  std::vector<double> x{2.0, 2.0}, g(2);
  ad::value_and_gradient(
      [](std::span<const ad::Var> v) {
        std::vector<Camera<ad::Var>> cams(2);
        cams[0].scale = v[0];
        cams[1].scale = v[1];
        return camera_regularizer_terms(cams, {{4, 4}, {4, 4}}).scale;
      },
      x, g);
  EXPECT_NEAR(g[0], 1.0, 1e-15);
  EXPECT_NEAR(g[1], 1.0, 1e-15);
}

TEST(Gradient, TwoImageCameraObjective) {
  auto spec = testing::small_spec(3);
  spec.n_cameras = 2;
  const Scene scene = normalize_depths(synth::generate_scene(spec).first);
  const AlignmentState state = testing::random_state(scene, 3);
  const AlignmentProblem problem = make_problem(scene, state);
  const Objective obj =
      alignment_objective(problem, stage_spec(state, Stage::CameraOnly, OptimizerConfig{}), Stage::CameraOnly);
  EXPECT_LE(testing::fd_compare(obj, pack(problem, state)).worst, kTolerance);
}

}  // namespace
}  // namespace toon3d
