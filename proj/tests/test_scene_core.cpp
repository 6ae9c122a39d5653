#include <gtest/gtest.h>

#include <numbers>

#include "activesplat/scene.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace activesplat;

namespace {

Gaussian3D with_scale(Vec3 log_scale, Vec4 q = Vec4(1, 0, 0, 0)) {
  Gaussian3D g;
  g.log_scale = log_scale;
  g.rotation = q;
  return g;
}

}  // namespace

TEST(Covariance, IdentityQuaternionUnitScale) {
  const Mat3 c = covariance(with_scale(Vec3::Zero()));
  EXPECT_LT((c - Mat3::Identity()).norm(), 1e-15);
}

TEST(Covariance, AxisScale) {
  const Mat3 c = covariance(with_scale(Vec3(std::log(2.0), 0, 0)));
  EXPECT_LT((c - Vec3(4, 1, 1).asDiagonal().toDenseMatrix()).norm(), 1e-12);
}

TEST(Covariance, RotatedAboutZ) {
  // 90 degrees about z: q = (cos 45, 0, 0, sin 45). R maps x to y, so the long axis moves to y.
  const double h = std::sqrt(0.5);
  const Mat3 c = covariance(with_scale(Vec3(std::log(2.0), 0, 0), Vec4(h, 0, 0, h)));
  Mat3 R;
  R << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 expected = R * Vec3(4, 1, 1).asDiagonal() * R.transpose();
  EXPECT_LT((c - expected).norm(), 1e-12);
  EXPECT_NEAR(c(1, 1), 4.0, 1e-12);
}

TEST(Covariance, PsdAndSymmetricOnRandomInputs) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    Gaussian3D g;
    g.log_scale = Vec3(rng.uniform(-6, 2), rng.uniform(-6, 2), rng.uniform(-6, 2));
    g.rotation = testutil::random_quat(rng);
    const Mat3 c = covariance(g);
    EXPECT_LT((c - c.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat3> es(c);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Project, OnAxisPoint) {
  CameraView cam;
  cam.intrinsics = {100, 100, 50, 50, 101, 101};
  Gaussian3D g;
  g.mean = Vec3(0, 0, 2);
  const auto p = project_gaussian(g, cam);
  ASSERT_FALSE(p.culled);
  EXPECT_NEAR(p.mean2d.x(), 50.0, 1e-12);
  EXPECT_NEAR(p.mean2d.y(), 50.0, 1e-12);
  EXPECT_EQ(p.depth, 2.0);
}

TEST(Project, IsotropicUnitAtDepthOne) {
  CameraView cam;
  cam.intrinsics = {1, 1, 0, 0, 1, 1};
  Gaussian3D g;
  g.mean = Vec3(0, 0, 1);
  const auto p = project_gaussian(g, cam);
  ASSERT_FALSE(p.culled);
  EXPECT_LT((p.cov2d - Mat2::Identity()).norm(), 1e-12);
}

TEST(Project, BehindCameraIsCulled) {
  CameraView cam;
  cam.intrinsics = {100, 100, 50, 50, 101, 101};
  Gaussian3D g;
  g.mean = Vec3(0, 0, -1);
  EXPECT_TRUE(project_gaussian(g, cam).culled);
}

TEST(Project, DepthIsCameraZOfMean) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    CameraView cam = testutil::front_camera();
    for (int k = 0; k < 6; ++k) cam.pose_delta[k] = rng.uniform(-0.05, 0.05);
    const Gaussian3D g = testutil::random_gaussian(rng);
    const auto p = project_gaussian(g, cam);
    ASSERT_FALSE(p.culled);
    EXPECT_EQ(p.depth, cam.effective_pose().apply(g.mean).z());
  }
}

TEST(Project, MatchesIndependentEwa) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    CameraView cam = testutil::front_camera();
    for (int k = 0; k < 6; ++k) cam.pose_delta[k] = rng.uniform(-0.05, 0.05);
    SceneModel s;
    s.gaussians.push_back(testutil::random_gaussian(rng));
    const auto ref = oracle::project_all(s, cam, 0.0);
    const auto p = project_gaussian(s.gaussians[0], cam);
    ASSERT_EQ(ref.size(), 1u);
    EXPECT_NEAR(p.mean2d.x(), ref[0].mx, 1e-9);
    EXPECT_NEAR(p.mean2d.y(), ref[0].my, 1e-9);
    EXPECT_LT((p.cov2d - ref[0].cov).norm(), 1e-9 * (1 + ref[0].cov.norm()));
  }
}

TEST(PoseDelta, ZeroLeavesPoseUnchanged) {
  Rng rng(3);
  Rigid pose{oracle::rodrigues(Vec3(0.3, -0.2, 0.5)), Vec3(1, 2, 3)};
  const Rigid out = apply_pose_delta(pose, Vec6::Zero());
  EXPECT_EQ(out.R, pose.R);
  EXPECT_EQ(out.t, pose.t);
}

TEST(PoseDelta, PureTranslationShiftsCameraFrame) {
  Rigid pose{oracle::rodrigues(Vec3(0.3, -0.2, 0.5)), Vec3(1, 2, 3)};
  Vec6 d = Vec6::Zero();
  d[0] = 0.1;
  const Rigid out = apply_pose_delta(pose, d);
  EXPECT_LT((out.R - pose.R).norm(), 1e-15);
  EXPECT_LT((out.t - (pose.t + Vec3(0.1, 0, 0))).norm(), 1e-15);
}

TEST(PoseDelta, TwoQuarterTurnsEqualHalfTurn) {
  Rigid pose{oracle::rodrigues(Vec3(0.1, 0.2, -0.3)), Vec3(0.5, -1, 2)};
  Vec6 quarter = Vec6::Zero();
  quarter[5] = std::numbers::pi / 2;
  Vec6 half = Vec6::Zero();
  half[5] = std::numbers::pi;
  const Rigid twice = apply_pose_delta(apply_pose_delta(pose, quarter), quarter);
  const Rigid once = apply_pose_delta(pose, half);
  EXPECT_LT((twice.R - once.R).norm(), 1e-9);
  EXPECT_LT((twice.t - once.t).norm(), 1e-9);
}

TEST(So3, ExpMatchesAngleAxis) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const Vec3 w(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    EXPECT_LT((so3_exp(w) - oracle::rodrigues(w)).norm(), 1e-12);
  }
  EXPECT_EQ(so3_exp(Vec3::Zero()), Mat3::Identity());
}

TEST(SceneModel, FlattenRoundTrip) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const SceneModel s = testutil::random_scene(rng, static_cast<int>(rng.index(6)));
    const std::vector<double> flat = s.flatten();
    ASSERT_EQ(flat.size(), s.parameter_count());
    EXPECT_EQ(flat.size(), 15 * s.size());
    SceneModel t;
    t.gaussians.resize(s.size());
    t.background = s.background;
    t.unflatten(flat);
    EXPECT_EQ(t, s);
    EXPECT_EQ(SceneModel::from_flat(flat, s.background), s);
  }
}

TEST(SceneModel, ParameterLayout) {
  Gaussian3D g;
  g.mean = Vec3(1, 2, 3);
  g.log_scale = Vec3(4, 5, 6);
  g.rotation = Vec4(7, 8, 9, 10);
  g.opacity_logit = 11;
  g.color = Vec3(12, 13, 14);
  g.mask_logit = 15;
  SceneModel s;
  s.gaussians = {g};
  const auto f = s.flatten();
  for (int i = 0; i < 15; ++i) EXPECT_EQ(f[i], i + 1.0);
  EXPECT_EQ(group_of_offset(param::kOpacity), ParamGroup::opacity);
  EXPECT_EQ(group_of_offset(param::kColor + 2), ParamGroup::color);
}

TEST(SceneModel, NormalizeRotations) {
  Rng rng(2);
  SceneModel s = testutil::random_scene(rng, 5);
  for (auto& g : s.gaussians) g.rotation *= rng.uniform(0.2, 5.0);
  s.normalize_rotations();
  for (const auto& g : s.gaussians) EXPECT_NEAR(g.rotation.norm(), 1.0, 1e-15);
}

TEST(SceneModel, OpacityAndMaskInOpenInterval) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    Gaussian3D g;
    g.opacity_logit = rng.uniform(-30, 30);
    g.mask_logit = rng.uniform(-30, 30);
    EXPECT_GT(g.opacity(), 0.0);
    EXPECT_LT(g.opacity(), 1.0);
    EXPECT_GT(g.mask(), 0.0);
    EXPECT_LT(g.mask(), 1.0);
  }
}

TEST(Intrinsics, Validation) {
  EXPECT_NO_THROW((Intrinsics{1, 1, 0, 0, 1, 1}.validate()));
  EXPECT_THROW((Intrinsics{0, 1, 0, 0, 1, 1}.validate()), std::invalid_argument);
  EXPECT_THROW((Intrinsics{1, -1, 0, 0, 1, 1}.validate()), std::invalid_argument);
  EXPECT_THROW((Intrinsics{1, 1, 0, 0, 0, 1}.validate()), std::invalid_argument);
}

TEST(LookAt, CameraLooksAtTarget) {
  const Rigid p = look_at(Vec3(1, 2, 3), Vec3(0, 0, 0.5));
  const Vec3 tc = p.apply(Vec3(0, 0, 0.5));
  EXPECT_NEAR(tc.x(), 0.0, 1e-12);
  EXPECT_NEAR(tc.y(), 0.0, 1e-12);
  EXPECT_GT(tc.z(), 0.0);
  EXPECT_LT((p.center() - Vec3(1, 2, 3)).norm(), 1e-12);
  EXPECT_LT((p.R * p.R.transpose() - Mat3::Identity()).norm(), 1e-12);
}
