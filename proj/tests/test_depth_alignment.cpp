#include <gtest/gtest.h>

#include <filesystem>

#include "activesplat/depth_alignment.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace activesplat;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct AffineData {
  Image mono, sensor;
};

AffineData affine_data(Rng& rng, int w, int h, double s, double t, double noise = 0.0) {
  AffineData d{Image(w, h, 1), Image(w, h, 1)};
  for (std::size_t i = 0; i < d.mono.size(); ++i) {
    d.mono[i] = rng.uniform(0.2, 2.0);
    d.sensor[i] = s * d.mono[i] + t + (noise > 0 ? rng.uniform(-noise, noise) : 0.0);
  }
  return d;
}

}  // namespace

TEST(AlignMask, ExactAffine) {
  Rng rng(1);
  const auto d = affine_data(rng, 20, 10, 2.0, 1.0);
  const Affine a = align_mask(d.sensor, d.mono, Image(20, 10, 1, 1.0));
  EXPECT_NEAR(a.scale, 2.0, 1e-9);
  EXPECT_NEAR(a.offset, 1.0, 1e-9);
}

TEST(AlignMask, ExactOnRandomAffines) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double s = rng.uniform(0.1, 10), t = rng.uniform(-3, 3);
    const auto d = affine_data(rng, 16, 8, s, t);
    const Affine a = align_mask(d.sensor, d.mono, Image());
    EXPECT_LT(std::abs(a.scale - s), 1e-9);
    EXPECT_LT(std::abs(a.offset - t), 1e-9);
  }
}

TEST(AlignMask, DegenerateCases) {
  const Image constant(6, 6, 1, 3.0);
  EXPECT_THROW(align_mask(constant, Image(6, 6, 1, 0.5), Image()), DegenerateMask);
  Rng rng(3);
  const auto d = affine_data(rng, 6, 6, 1.0, 0.0);
  Image one(6, 6, 1);
  one[7] = 1.0;
  EXPECT_THROW(align_mask(d.sensor, d.mono, one), DegenerateMask);
  Image nan_sensor = d.sensor;
  for (std::size_t i = 1; i < nan_sensor.size(); ++i) nan_sensor[i] = kNaN;
  EXPECT_THROW(align_mask(nan_sensor, d.mono, Image()), DegenerateMask);
}

TEST(AlignMask, NoisyFitMatchesGridSearch) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto d = affine_data(rng, 500, 1, 1.5, 0.2, 0.01);
    const Affine a = align_mask(d.sensor, d.mono, Image());
    const auto coarse = oracle::grid_search_affine(d.mono.data(), d.sensor.data(), 1.4, 1.6, 0.1, 0.3);
    const auto fine = oracle::grid_search_affine(d.mono.data(), d.sensor.data(), coarse.scale - 0.002,
                                                 coarse.scale + 0.002, coarse.offset - 0.002, coarse.offset + 0.002);
    EXPECT_NEAR(a.scale, fine.scale, 1e-3);
    EXPECT_NEAR(a.offset, fine.offset, 1e-3);
    // No grid point beats the closed form.
    double sse = 0.0;
    for (std::size_t i = 0; i < d.mono.size(); ++i) sse += std::pow(d.sensor[i] - a.apply(d.mono[i]), 2);
    EXPECT_LE(sse, fine.cost * (1 + 1e-12));
  }
}

TEST(AlignFrame, SingleFullMaskReproducesSensor) {
  Rng rng(5);
  const auto d = affine_data(rng, 12, 9, 0.7, 0.3);
  MaskedDepthFrame f{d.sensor, d.mono, {Image(12, 9, 1, 1.0)}, 0};
  const Image out = align_frame(f);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], d.sensor[i], 1e-12);
}

TEST(AlignFrame, PiecewiseAffineRecoveredPerRegion) {
  Rng rng(6);
  const int W = 20, H = 10;
  MaskedDepthFrame f{Image(W, H, 1), Image(W, H, 1), {Image(W, H, 1), Image(W, H, 1)}, 0};
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double m = rng.uniform(0.2, 2.0);
      f.mono_depth.at(x, y) = m;
      const bool left = x < W / 2;
      f.masks[left ? 0 : 1].at(x, y) = 1.0;
      f.sensor_depth.at(x, y) = left ? 2.0 * m + 0.1 : 0.5 * m + 1.0;
    }
  }
  const Image per = align_frame(f);
  double sse_mask = 0, sse_global = 0;
  MaskedDepthFrame g = f;
  g.masks.clear();
  const Image global = align_frame(g);
  for (std::size_t i = 0; i < per.size(); ++i) {
    EXPECT_NEAR(per[i], f.sensor_depth[i], 1e-9);
    sse_mask += std::pow(per[i] - f.sensor_depth[i], 2);
    sse_global += std::pow(global[i] - f.sensor_depth[i], 2);
  }
  EXPECT_GT(sse_global, 1e-3);
  EXPECT_LT(sse_mask, 1e-15);
}

TEST(AlignFrame, EmptyMaskListIsGlobalFit) {
  Rng rng(7);
  const auto d = affine_data(rng, 10, 10, 1.2, -0.4, 0.05);
  MaskedDepthFrame f{d.sensor, d.mono, {}, std::nullopt};
  const Image out = align_frame(f);
  const Affine a = align_mask(d.sensor, d.mono, Image());
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], a.apply(d.mono[i]), 1e-12);
  const auto fit = fit_frame(f);
  EXPECT_TRUE(fit.per_mask.empty());
}

TEST(AlignFrame, OverlapTakesSmallestMaskAndDegenerateFallsBack) {
  Rng rng(8);
  const int W = 10, H = 10;
  MaskedDepthFrame f{Image(W, H, 1), Image(W, H, 1), {Image(W, H, 1, 1.0), Image(W, H, 1)}, 1};
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double m = rng.uniform(0.2, 2.0);
      f.mono_depth.at(x, y) = m;
      const bool inner = x >= 3 && x < 6 && y >= 3 && y < 6;
      if (inner) f.masks[1].at(x, y) = 1.0;
      f.sensor_depth.at(x, y) = inner ? 3.0 * m : m + 1.0;
    }
  }
  const Image out = align_frame(f);
  // The small inner mask gets its own exact fit even though the outer mask covers it too.
  EXPECT_NEAR(out.at(4, 4), f.sensor_depth.at(4, 4), 1e-9);

  // Make the inner mask degenerate: it then uses the global fit.
  MaskedDepthFrame g = f;
  for (int y = 3; y < 6; ++y)
    for (int x = 3; x < 6; ++x) g.sensor_depth.at(x, y) = kNaN;
  const auto fit = fit_frame(g);
  ASSERT_EQ(fit.per_mask.size(), 2u);
  EXPECT_FALSE(fit.per_mask[1].has_value());
  const Image h = align_frame(g);
  EXPECT_NEAR(h.at(4, 4), fit.global.apply(g.mono_depth.at(4, 4)), 1e-12);
}

TEST(AlignFrame, AllInvalidSensorThrows) {
  MaskedDepthFrame f{Image::nan_like(5, 5), Image(5, 5, 1, 1.0), {}, std::nullopt};
  EXPECT_ANY_THROW(align_frame(f));
}

TEST(AlignFrame, IdentityOnMetricMono) {
  Rng rng(9);
  const auto d = affine_data(rng, 8, 8, 1.0, 0.0);
  MaskedDepthFrame f{d.sensor, d.sensor, {Image(8, 8, 1, 1.0)}, 0};
  const auto fit = fit_frame(f);
  EXPECT_NEAR(fit.per_mask[0]->scale, 1.0, 1e-12);
  EXPECT_NEAR(fit.per_mask[0]->offset, 0.0, 1e-12);
}

TEST(Lift, FlatPlaneIsCoplanar) {
  CameraView cam;
  cam.intrinsics = {30, 30, 15, 10, 31, 21};
  cam.pose = look_at(Vec3(0.3, -0.2, 1.0), Vec3::Zero());
  const Image depth(31, 21, 1, 0.8);
  const auto gs = lift_depth(depth, cam, 1.0, 1);
  ASSERT_EQ(gs.size(), 31u * 21u);
  // Constant camera-z means the plane through the points has the optical axis as normal.
  const Vec3 axis = cam.pose.R.row(2).transpose();
  const double ref = axis.dot(gs[0].mean);
  for (const auto& g : gs) {
    EXPECT_NEAR(axis.dot(g.mean), ref, 1e-6);
    EXPECT_NEAR(g.log_scale[0], std::log(1.5 * 0.8 / 30), 1e-12);
    EXPECT_EQ(g.opacity_logit, 0.0);
    EXPECT_NEAR(g.mask(), 0.01, 1e-12);
    for (int c = 0; c < 3; ++c) {
      EXPECT_GE(g.color[c], 0.0);
      EXPECT_LT(g.color[c], 1.0);
    }
  }
}

TEST(Lift, FractionCountAndDeterminism) {
  CameraView cam;
  cam.intrinsics = {50, 50, 50, 50, 100, 100};
  const Image depth(100, 100, 1, 2.0);
  const auto a = lift_depth(depth, cam, 0.25, 42);
  EXPECT_EQ(a.size(), 2500u);
  const auto b = lift_depth(depth, cam, 0.25, 42);
  EXPECT_EQ(a, b);
  const auto c = lift_depth(depth, cam, 0.25, 43);
  EXPECT_NE(a, c);
  EXPECT_THROW(lift_depth(depth, cam, 0.0, 1), std::invalid_argument);
}

TEST(Lift, ObjectMaskSetsMembership) {
  CameraView cam;
  cam.intrinsics = {10, 10, 2, 2, 5, 5};
  Image mask(5, 5, 1);
  mask.at(0, 0) = 1.0;
  const auto gs = lift_depth(Image(5, 5, 1, 1.0), cam, 1.0, 3, &mask);
  EXPECT_NEAR(gs[0].mask(), 0.99, 1e-12);
  EXPECT_NEAR(gs[1].mask(), 0.01, 1e-12);
}

TEST(ObjectMask, SphereSilhouetteMatchesAnalyticCone) {
  World w;
  const Vec3 centre(0.1, -0.05, 0.0);
  const double R = 0.3;
  w.surfaces.push_back({Sphere{centre, R}, Vec3::Constant(0.5), 7});
  w.surfaces.push_back({Box{Vec3(-3, -3, -3), Vec3(3, 3, -2.5)}, Vec3::Constant(0.5), 1});
  CameraView cam;
  cam.intrinsics = {60, 60, 31.5, 23.5, 64, 48};
  cam.pose = look_at(Vec3(0.2, 0.4, 2.0), Vec3::Zero());
  const auto masks = propagate_object_mask(w, {cam}, 32, 24);
  ASSERT_EQ(masks.size(), 1u);
  const Vec3 c = cam.pose.apply(centre);
  int inside = 0, checked = 0;
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 64; ++x) {
      const Vec3 d((x - cam.intrinsics.cx) / cam.intrinsics.fx, (y - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
      // Inside the tangent cone: (d.c)^2 >= |d|^2 (|c|^2 - R^2).
      const double margin = std::pow(d.dot(c), 2) - d.squaredNorm() * (c.squaredNorm() - R * R);
      if (std::abs(margin) < 1e-9) continue;
      ++checked;
      const bool expect = margin > 0 && d.dot(c) > 0;
      inside += expect;
      EXPECT_EQ(masks[0].at(x, y) > 0.5, expect) << x << "," << y;
    }
  }
  EXPECT_GT(inside, 100);
  EXPECT_GT(checked, 3000);
}

TEST(ObjectMask, OutOfFrustumIsEmpty) {
  World w;
  w.surfaces.push_back({Sphere{Vec3::Zero(), 0.2}, Vec3::Constant(0.5), 3});
  CameraView a, b;
  a.intrinsics = b.intrinsics = {30, 30, 15, 15, 31, 31};
  a.pose = look_at(Vec3(0, 0, 2), Vec3::Zero());
  b.pose = look_at(Vec3(0, 0, 2), Vec3(0, 0, 4));
  const auto masks = propagate_object_mask(w, {a, b}, 15, 15);
  double sa = 0, sb = 0;
  for (double v : masks[0].data()) sa += v;
  for (double v : masks[1].data()) sb += v;
  EXPECT_GT(sa, 0);
  EXPECT_EQ(sb, 0);
}

TEST(ObjectMask, ExternalFilesPassThrough) {
  const auto dir = std::filesystem::temp_directory_path() / "activesplat_mask_test";
  std::filesystem::create_directories(dir);
  Image m(4, 3, 1);
  m.at(1, 1) = 1.0;
  write_pgm(dir / "m0.pgm", m);
  const auto out = propagate_object_mask(std::vector<std::filesystem::path>{dir / "m0.pgm"});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].data(), m.data());
  EXPECT_ANY_THROW(propagate_object_mask(std::vector<std::filesystem::path>{dir / "missing.pgm"}));
}
