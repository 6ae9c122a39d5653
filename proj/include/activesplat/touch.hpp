#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "activesplat/fisher.hpp"
#include "activesplat/geometry.hpp"

namespace activesplat {

class EmptyTouch : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};
class RetreatFailed : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};
class NoFeasibleTouch : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Equidistant fisheye tactile camera (r = f * theta) with its filters.
struct TouchSensorSpec {
  int width = 33;
  int height = 33;
  double focal = 16.0;  // pixels per radian
  double cx = 16.0;
  double cy = 16.0;
  double max_theta = 1.0;       // radians
  double max_range = 0.03;      // metres along the ray
  double noise_sigma = 2e-4;    // metres
  double r_max = 14.0;          // radial filter, pixels
  double z_min = 0.0;
  double z_max = 0.02;

  Intrinsics intrinsics() const { return {focal, focal, cx, cy, width, height}; }
};

struct TouchSample {
  Rigid pose;          // world -> sensor, +z into the surface
  Image fisheye_depth;  // along-ray distance, NaN where nothing was sensed
  TouchSensorSpec spec;
};

/// Ray-casts the ground truth through the fisheye model and adds Gaussian noise.
TouchSample simulate_touch(const World& world, const Rigid& pose, const TouchSensorSpec& spec, std::uint64_t seed);

struct TouchPoints {
  std::vector<Vec3> points;               // sensor frame
  std::vector<std::pair<int, int>> pixels;  // originating (x, y)
  int grid_width = 0;
  int grid_height = 0;
};

/// p = d * t per finite pixel, then the radial (pixels) and z filters.
TouchPoints backproject_and_filter(const TouchSample& sample);

struct TouchRaster {
  Image depth;  // NaN where no triangle covers the pixel
  Image valid;  // 1 where depth is finite
  int triangles = 0;
};

/// Meshes the points with the tactile pixel grid (two triangles per complete
/// quad) and z-buffers them into `target`. `sensor_to_target` maps sensor-frame
/// points into the target camera frame. Depth is interpolated linearly in
/// screen space; pinhole targets store camera z, fisheye targets ray distance.
TouchRaster triangulate_and_rasterize(const TouchPoints& points, const Rigid& sensor_to_target,
                                      const CameraView& target);

/// Pinhole camera used to render and supervise touches.
struct TouchCameraConfig {
  Intrinsics intrinsics{16.0, 16.0, 16.0, 16.0, 33, 33};
  double standoff = 0.03;     // metres behind the sensor for supervision views
  double retreat_step = 0.005;
  int retreat_max_steps = 40;
  double retreat_min_alpha = 0.1;
  RenderSettings render;
};

/// Camera at a sensor pose (world -> sensor) moved `distance` metres back along its own -z.
CameraView touch_camera(const Rigid& sensor_pose, const TouchCameraConfig& config, double distance);

struct RetreatedView {
  CameraView cam;
  int steps = 0;
};

/// Backs the camera off along its -z axis until the mean rendered alpha exceeds
/// the threshold. Throws RetreatFailed after the step limit.
RetreatedView retreat_touch_view(const CameraView& cam, const SceneModel& scene,
                                 const TouchCameraConfig& config = {});

/// Gaussians with sigmoid(mask_logit) > 0.5.
std::vector<bool> object_gaussians(const SceneModel& scene);

struct TouchSelection {
  std::size_t index = 0;
  std::vector<double> scores;  // NaN for candidates whose retreat failed
  std::vector<CameraView> retreated;
};

/// Depth-channel Fisher score of each candidate computed on the object
/// Gaussians only; returns the argmax (ties to the lower index).
TouchSelection select_next_touch(const std::vector<Rigid>& candidate_poses, const SceneModel& scene,
                                 const HessianDiagonal& train_depth, const TouchCameraConfig& config = {},
                                 double lambda_prior = 1e-6);

struct TouchViewResult {
  CameraView view;
  std::size_t added_gaussians = 0;
};

/// Converts a touch sample into a depth-only supervision view and seeds one
/// Gaussian per 4x4 block of surviving tactile pixels.
TouchViewResult add_touch_view(SceneModel& scene, const TouchSample& sample, int view_id,
                               const TouchCameraConfig& config, std::uint64_t seed);

}  // namespace activesplat
