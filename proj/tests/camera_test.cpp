#include <gtest/gtest.h>

#include <numbers>

#include "support.hpp"

namespace toon3d {
namespace {

CameraParams unit_camera() {
  CameraParams cam;
  cam.fx = cam.fy = 1.0;
  cam.cx = cam.cy = 0.0;
  return cam;
}

void expect_vec(const Vec3d& a, const Vec3d& b, double tol = 1e-15) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(a.z, b.z, tol);
}

TEST(Backproject, PrincipalRay) { expect_vec(backproject(Vec2d{0, 0}, 2.0, unit_camera()), {0, 0, 2}); }

TEST(Backproject, ScaleAndShift) {
  CameraParams cam = unit_camera();
  cam.scale = 0.5;
  cam.shift = 1.0;
  expect_vec(backproject(Vec2d{0, 0}, 2.0, cam), {0, 0, 2});
}

TEST(Backproject, OffAxisPixel) { expect_vec(backproject(Vec2d{1, 0}, 2.0, unit_camera()), {2, 0, 2}); }

TEST(Backproject, PoseAndProjectionInvert) {
  CameraParams cam = unit_camera();
  cam.rotation = quaternion_from_axis_angle({0.2, -1.0, 0.4}, 0.7);
  cam.translation = {0.3, -0.2, 1.5};
  cam.fx = 1.3;
  cam.fy = 0.9;
  cam.cx = 0.5;
  cam.cy = 0.45;
  cam.scale = 1.7;
  cam.shift = 0.2;
  const Vec2d uv{0.31, 0.77};
  double z = 0.0;
  const Vec2d back = project(backproject(uv, 0.8, cam), cam, &z);
  EXPECT_NEAR(back.x, uv.x, 1e-14);
  EXPECT_NEAR(back.y, uv.y, 1e-14);
  EXPECT_NEAR(z, 1.7 * 0.8 + 0.2, 1e-14);
}

Scene scene_with_points(int n_images, int n_points) {
  Scene scene;
  for (int i = 0; i < n_images; ++i) {
    ImageRecord rec;
    rec.id = i;
    rec.width = rec.height = 4;
    rec.depth = DepthRaster(4, 4, 1, 1.0);
    scene.images.push_back(rec);
  }
  scene.correspondences = CorrespondenceSet(n_images, n_points);
  for (int i = 0; i < n_images; ++i) {
    for (int c = 0; c < n_points; ++c) scene.correspondences.at(i, c) = {1.0, 1.0, true};
  }
  return scene;
}

TEST(Loss3d, CoincidentPointsGiveZero) {
  const Scene scene = scene_with_points(2, 1);
  std::vector<CameraParams> cams(2, unit_camera());
  EXPECT_EQ(loss_3d(scene, cams, {{2.0}, {2.0}}), 0.0);
}

TEST(Loss3d, UnitSeparationGivesOne) {
  // Depth 0 through s = 1, eta = 0 puts both points at their camera centers.
  const Scene scene = scene_with_points(2, 1);
  std::vector<CameraParams> cams(2, unit_camera());
  cams[1].translation = {1.0, 0.0, 0.0};
  EXPECT_EQ(loss_3d(scene, cams, {{0.0}, {0.0}}), 1.0);
}

TEST(Loss3d, ThreeViewsCountThreePairs) {
  // Points at x = 0, 1, 3: squared gaps 1, 9, 4, mean 14 / 3.
  const Scene scene = scene_with_points(3, 1);
  std::vector<CameraParams> cams(3, unit_camera());
  cams[1].translation = {1.0, 0.0, 0.0};
  cams[2].translation = {3.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(loss_3d(scene, cams, {{0.0}, {0.0}, {0.0}}), 14.0 / 3.0);
}

TEST(Loss3d, InvisibleObservationsAreSkipped) {
  Scene scene = scene_with_points(3, 1);
  scene.correspondences.at(2, 0).visible = false;
  std::vector<CameraParams> cams(3, unit_camera());
  cams[1].translation = {1.0, 0.0, 0.0};
  cams[2].translation = {100.0, 0.0, 0.0};
  EXPECT_EQ(loss_3d(scene, cams, {{0.0}, {0.0}, {0.0}}), 1.0);
}

std::vector<CameraParams> with_scales(std::vector<double> s, std::vector<double> eta = {}) {
  std::vector<CameraParams> cams;
  for (std::size_t i = 0; i < s.size(); ++i) {
    CameraParams cam = unit_camera();
    cam.scale = s[i];
    cam.shift = eta.empty() ? 0.0 : eta[i];
    cams.push_back(cam);
  }
  return cams;
}

TEST(CameraRegularizers, ScaleTerm) {
  const std::vector<std::array<int, 2>> dims{{4, 4}, {4, 4}};
  EXPECT_EQ(camera_regularizers(with_scales({1.0, 1.0}), dims)["scale"], 0.0);
  EXPECT_EQ(camera_regularizers(with_scales({0.5, 1.5}), dims)["scale"], 0.0);
  EXPECT_DOUBLE_EQ(camera_regularizers(with_scales({2.0, 2.0}), dims)["scale"], 1.0);
}

TEST(CameraRegularizers, NegativeScaleHinge) {
  const std::vector<std::array<int, 2>> dims{{4, 4}, {4, 4}};
  EXPECT_DOUBLE_EQ(camera_regularizers(with_scales({-0.5, 1.0}), dims)["neg"], 0.0625);
  EXPECT_DOUBLE_EQ(camera_regularizers(with_scales({1.0, 1.0}, {-0.2, 0.4}), dims)["neg"], 0.01);
  EXPECT_EQ(camera_regularizers(with_scales({0.0, 1.0}, {0.0, 0.0}), dims)["neg"], 0.0);
}

TEST(CameraRegularizers, AspectAndFocal) {
  CameraParams cam = unit_camera();
  cam.fx = 0.75;
  cam.fy = 1.0;
  // Square pixels on a 400 x 300 image: fx / fy = h / w.
  auto r = camera_regularizers({cam}, {{400, 300}});
  EXPECT_EQ(r["aspect"], 0.0);
  EXPECT_DOUBLE_EQ(r["focal"], 1.75);
  cam.fx = 1.0;
  r = camera_regularizers({cam}, {{400, 300}});
  EXPECT_DOUBLE_EQ(r["aspect"], 0.0625);
  EXPECT_DOUBLE_EQ(r.total, r["aspect"] + r["focal"]);
}

TEST(CameraObjective, ZeroWeightsLeaveL3d) {
  const Scene scene = normalize_depths(synth::generate_scene(testing::small_spec(2)).first);
  const auto state = testing::random_state(scene, 2);
  const auto b = camera_objective(scene, state.cams, LossWeights{0, 0, 0, 0, 0, 0, 0});
  EXPECT_GT(b["l3d"], 0.0);
  EXPECT_EQ(b.total, b["l3d"]);
  EXPECT_EQ(b["l3d"], loss_3d(scene, state.cams, sampled_correspondence_depths(scene)));
}

TEST(CameraObjective, AlignedSceneLeavesOnlyIntrinsicTerms) {
  synth::SyntheticSpec spec;
  spec.seed = 3;
  const auto [scene, gt] = synth::generate_scene(spec);
  const LossWeights w;
  const auto b = camera_objective(scene, gt.cams, w);
  EXPECT_LT(b["l3d"], 1e-9);
  EXPECT_EQ(b["scale"], 0.0);
  EXPECT_EQ(b["neg"], 0.0);
  EXPECT_NEAR(b.total, w.aspect * b["aspect"] + w.focal * b["focal"], 1e-9);
}

TEST(CameraObjective, FocalWeightIsLinear) {
  const Scene scene = testing::small_scene(5);
  const auto state = testing::random_state(scene, 5);
  LossWeights w;
  const auto a = camera_objective(scene, state.cams, w);
  w.focal *= 2.0;
  const auto b = camera_objective(scene, state.cams, w);
  EXPECT_NEAR(b.total - a.total, 0.5 * w.focal * a["focal"], 1e-15 * b.total);
}

TEST(DefaultCamera, SquarePixelsCentered) {
  ImageRecord rec;
  rec.width = 400;
  rec.height = 300;
  const CameraParams cam = default_camera(rec);
  EXPECT_EQ(cam.fx * rec.width, 400.0);
  EXPECT_EQ(cam.fy * rec.height, 400.0);
  EXPECT_EQ(cam.cx, 0.5);
  EXPECT_EQ(cam.cy, 0.5);
  EXPECT_TRUE(is_valid(cam));
}

}  // namespace
}  // namespace toon3d
